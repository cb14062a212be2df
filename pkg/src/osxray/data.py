"""Image I/O, dataset manifests, splitting, pair construction and the
standard exemplar set.

Interchange format is 8-bit binary PGM (P5). Manifests are line-delimited
UTF-8 records: id<TAB>path<TAB>category<TAB>source<TAB>split, no header.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .siamese import PairSample, energy
from .tensor import Tensor

SOURCES = ("real", "generated", "user")
SPLITS = ("train", "val", "test", "standard", "unassigned")


@dataclass
class ImageSample:
    id: str
    pixels: np.ndarray  # H x W uint8
    category: str
    source: str = "real"
    split: str = "unassigned"

    def __post_init__(self):
        if not self.category:
            raise DomainError("sample category must be non-empty")
        if self.source not in SOURCES:
            raise DomainError(f"unknown source {self.source!r}")
        if self.split not in SPLITS:
            raise DomainError(f"unknown split {self.split!r}")
        if self.source == "generated" and self.split in ("test", "standard"):
            raise DomainError("generated samples may not enter test or standard splits")
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ShapeError(f"pixels must be 2-d, got shape {self.pixels.shape}")


# -- PGM (P5) codec ----------------------------------------------------------


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse binary PGM bytes into an H x W uint8 array.

    Accepts canonical P5 files: magic, whitespace-separated width, height
    and maxval 255, a single whitespace byte, then the raw payload.
    """
    if data[:2] != b"P5":
        raise FormatError(f"expected magic 'P5', got {data[:2]!r}", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header", offset=start)
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"non-numeric header token {token!r}", offset=start)
        fields.append(int(token))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", offset=2)
    if width < 1 or height < 1:
        raise FormatError(f"degenerate dimensions {width}x{height}", offset=2)
    expected = width * height
    payload = data[pos:pos + expected]
    if len(payload) < expected:
        raise FormatError(
            f"payload truncated: expected {expected} bytes, got {len(payload)}",
            offset=pos + len(payload))
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def encode_pgm(pixels: np.ndarray) -> bytes:
    """Emit canonical P5 bytes: single-newline separators, no comments."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ShapeError(f"pixels must be 2-d, got shape {pixels.shape}")
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


# -- resampling ----------------------------------------------------------------


def normalize_resize(sample: ImageSample, target_hw: tuple[int, int]) -> Tensor:
    """Bilinear resample to the target resolution, scaled into [0,1]."""
    pixels = sample.pixels
    sh, sw = pixels.shape
    if sh == 0 or sw == 0:
        raise ShapeError("cannot resize a zero-dimension image")
    th, tw = target_hw
    if (sh, sw) == (th, tw):
        resized = pixels.astype(np.float32)
    else:
        resized = _bilinear(pixels.astype(np.float32), th, tw)
    return Tensor((resized / 255.0).reshape(1, 1, th, tw))


def _bilinear(img: np.ndarray, th: int, tw: int) -> np.ndarray:
    sh, sw = img.shape
    ys = (np.arange(th) + 0.5) * (sh / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (sw / tw) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, sh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


# -- manifests -------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    category: str
    source: str
    split: str


@dataclass
class DatasetManifest:
    """Immutable snapshot of a dataset's records; split ops return new values."""

    records: list[ManifestRecord] = field(default_factory=list)
    root: str = "."

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise DomainError(f"duplicate sample id {rec.id!r}")
            seen.add(rec.id)

    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})

    def by_split(self, split: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == split]

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.category] = out.get(r.category, 0) + 1
        return out

    def resolve(self, rec: ManifestRecord) -> str:
        return rec.path if os.path.isabs(rec.path) else os.path.join(self.root, rec.path)

    def load_sample(self, rec: ManifestRecord) -> ImageSample:
        with open(self.resolve(rec), "rb") as fh:
            pixels = decode_pgm(fh.read())
        return ImageSample(rec.id, pixels, rec.category, rec.source, rec.split)

    def load_split(self, split: str) -> list[ImageSample]:
        return [self.load_sample(r) for r in self.by_split(split)]

    def save(self, path: str) -> None:
        lines = [f"{r.id}\t{r.path}\t{r.category}\t{r.source}\t{r.split}"
                 for r in self.records]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path: str, check_paths: bool = True) -> "DatasetManifest":
        root = os.path.dirname(os.path.abspath(path))
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 5:
                    raise FormatError(f"manifest line {lineno}: expected 5 fields, "
                                      f"got {len(parts)}")
                rec = ManifestRecord(*parts)
                if rec.source not in SOURCES:
                    raise FormatError(f"manifest line {lineno}: bad source {rec.source!r}")
                if rec.split not in SPLITS:
                    raise FormatError(f"manifest line {lineno}: bad split {rec.split!r}")
                records.append(rec)
        manifest = cls(records, root)
        if check_paths:
            for rec in records:
                full = manifest.resolve(rec)
                if not os.path.exists(full):
                    raise DomainError(f"manifest references missing file {full}")
        return manifest


def stratified_split(manifest: DatasetManifest, test_frac: float, val_frac: float,
                     seed: int) -> DatasetManifest:
    """Per-category split of real samples into test/val/train.

    round(test_frac * n) samples per category go to test (seeded shuffle);
    of the remainder, round(val_frac * m) go to val; the rest train.
    Generated samples always stay in train.
    """
    if not 0 <= test_frac < 1 or not 0 <= val_frac < 1:
        raise DomainError(f"fractions must be in [0,1), got {test_frac}/{val_frac}")
    rng = np.random.default_rng(seed)
    by_cat: dict[str, list[ManifestRecord]] = {}
    for rec in manifest.records:
        if rec.source == "real":
            by_cat.setdefault(rec.category, []).append(rec)
    assignment: dict[str, str] = {}
    for category in sorted(by_cat):
        recs = by_cat[category]
        if len(recs) < 3:
            raise DomainError(f"category {category!r} has only {len(recs)} real "
                              "samples; need at least 3 to split")
        order = rng.permutation(len(recs))
        n_test = round(test_frac * len(recs))
        remainder = len(recs) - n_test
        n_val = round(val_frac * remainder)
        for rank, idx in enumerate(order):
            if rank < n_test:
                split = "test"
            elif rank < n_test + n_val:
                split = "val"
            else:
                split = "train"
            assignment[recs[idx].id] = split
    new_records = []
    for rec in manifest.records:
        if rec.source == "real":
            new_records.append(replace(rec, split=assignment[rec.id]))
        else:
            new_records.append(replace(rec, split="train"))
    return DatasetManifest(new_records, manifest.root)


# -- pair construction -------------------------------------------------------------


def make_pairs(samples: list[ImageSample], n_pairs: int, like_fraction: float,
               seed: int, target_hw: tuple[int, int] = (64, 64)) -> list[PairSample]:
    """Sample labeled pairs: y=0 within a category, y=1 across categories."""
    if not 0 <= like_fraction <= 1:
        raise DomainError(f"like_fraction must be in [0,1], got {like_fraction}")
    if n_pairs < 1:
        raise DomainError(f"n_pairs must be >= 1, got {n_pairs}")
    rng = np.random.default_rng(seed)
    by_cat: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_cat.setdefault(s.category, []).append(i)
    categories = sorted(by_cat)
    n_like = round(like_fraction * n_pairs)
    n_unlike = n_pairs - n_like
    rich = [c for c in categories if len(by_cat[c]) >= 2]
    if n_like > 0 and not rich:
        raise DomainError("like pairs requested but no category has 2 samples")
    if n_unlike > 0 and len(categories) < 2:
        raise DomainError("unlike pairs requested but fewer than 2 categories exist")

    cache: dict[int, Tensor] = {}

    def as_tensor(idx: int) -> Tensor:
        if idx not in cache:
            cache[idx] = normalize_resize(samples[idx], target_hw)
        return cache[idx]

    pairs = []
    for _ in range(n_like):
        cat = rich[rng.integers(len(rich))]
        i, j = rng.choice(by_cat[cat], size=2, replace=False)
        pairs.append(PairSample(as_tensor(i), as_tensor(j), 0,
                                samples[i].id, samples[j].id, cat, cat))
    for _ in range(n_unlike):
        ca, cb = rng.choice(len(categories), size=2, replace=False)
        ca, cb = categories[ca], categories[cb]
        i = rng.choice(by_cat[ca])
        j = rng.choice(by_cat[cb])
        pairs.append(PairSample(as_tensor(i), as_tensor(j), 1,
                                samples[i].id, samples[j].id, ca, cb))
    rng.shuffle(pairs)
    return pairs


# -- standard set --------------------------------------------------------------------


@dataclass
class StandardSet:
    """Per-category exemplar ids with frozen latent vectors.

    Latents are recomputed whenever the serving checkpoint is swapped.
    """

    members: dict[str, list[tuple[str, np.ndarray]]] = field(default_factory=dict)

    def categories(self) -> list[str]:
        return sorted(self.members)

    def sizes(self) -> dict[str, int]:
        return {c: len(m) for c, m in self.members.items()}

    def member_ids(self) -> dict[str, list[str]]:
        return {c: [mid for mid, _ in m] for c, m in self.members.items()}

    def with_latents(self, embed_fn) -> "StandardSet":
        """New set with latents recomputed by ``embed_fn(sample_id) -> vector``."""
        fresh = {}
        for cat, members in self.members.items():
            fresh[cat] = [(mid, np.asarray(embed_fn(mid), dtype=np.float32))
                          for mid, _ in members]
        return StandardSet(fresh)


def select_standard_set(manifest: DatasetManifest, k_per_category: int,
                        net=None, explicit_ids: dict[str, list[str]] | None = None,
                        target_hw: tuple[int, int] = (64, 64),
                        ) -> tuple[StandardSet, DatasetManifest]:
    """Choose k exemplars per category and move them to the standard split.

    Explicit mode takes the given ids verbatim. Automatic mode embeds every
    real train-split candidate and keeps the k with the lowest mean
    intra-category energy (the most central exemplars); it requires ``net``.
    """
    if k_per_category < 1:
        raise DomainError(f"k_per_category must be >= 1, got {k_per_category}")
    candidates: dict[str, list[ManifestRecord]] = {}
    for rec in manifest.records:
        if rec.source == "real" and rec.split == "train":
            candidates.setdefault(rec.category, []).append(rec)

    chosen: dict[str, list[str]] = {}
    latents: dict[str, np.ndarray] = {}
    if explicit_ids is not None:
        by_id = {r.id: r for r in manifest.records}
        for cat, ids in explicit_ids.items():
            for sid in ids:
                if sid not in by_id:
                    raise DomainError(f"unknown explicit standard-set id {sid!r}")
                rec = by_id[sid]
                if rec.source != "real":
                    raise DomainError(f"standard-set member {sid!r} must be a real sample")
                if rec.category != cat:
                    raise DomainError(f"sample {sid!r} is category {rec.category!r}, "
                                      f"not {cat!r}")
            chosen[cat] = list(ids)
    else:
        if net is None:
            raise DomainError("automatic standard-set selection requires a network")
        for cat in sorted(candidates):
            recs = candidates[cat]
            if len(recs) < k_per_category:
                raise DomainError(f"category {cat!r} has {len(recs)} train candidates, "
                                  f"need {k_per_category}")
            zs = []
            for rec in recs:
                z = net.forward(normalize_resize(manifest.load_sample(rec), target_hw))
                zs.append(z.data[0].copy())
                latents[rec.id] = zs[-1]
            mean_energy = []
            for i in range(len(recs)):
                others = [energy(zs[i], zs[j]) for j in range(len(recs)) if j != i]
                mean_energy.append(sum(others) / max(len(others), 1))
            ranked = sorted(range(len(recs)), key=lambda i: (mean_energy[i], recs[i].id))
            chosen[cat] = [recs[i].id for i in ranked[:k_per_category]]

    selected = {sid for ids in chosen.values() for sid in ids}
    new_records = [replace(r, split="standard") if r.id in selected else r
                   for r in manifest.records]
    new_manifest = DatasetManifest(new_records, manifest.root)

    members: dict[str, list[tuple[str, np.ndarray]]] = {}
    by_id = {r.id: r for r in new_manifest.records}
    for cat, ids in chosen.items():
        row = []
        for sid in ids:
            if sid in latents:
                z = latents[sid]
            elif net is not None:
                z = net.forward(normalize_resize(
                    new_manifest.load_sample(by_id[sid]), target_hw)).data[0].copy()
            else:
                z = np.zeros(0, dtype=np.float32)
            row.append((sid, z))
        members[cat] = row
    return StandardSet(members), new_manifest
