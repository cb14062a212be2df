"""Semi-live training: accumulate doctor-verified labeled submissions,
fine-tune at a threshold, validate through the inference path, and swap the
serving checkpoint atomically only when validation does not regress.

Checkpoint files ("OSXR1") hold named float32 parameter tensors for both
networks, the standard-set latents, creation metadata, and a trailing
64-bit version. The byte layout is documented in docs/checkpoint.md.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ImageSample, StandardSet, make_pairs, normalize_resize
from .dagan import DaganGenerator
from .errors import DomainError, FormatError, StateError
from .inference import diagnose
from .layers import EmbeddingNetwork
from .siamese import LossConfig, train_epoch

MAGIC = b"OSXR1"

EMBED_PREFIX = "embed."
DAGAN_PREFIX = "dagan."


# -- labeled submissions -------------------------------------------------------


@dataclass
class LabeledSubmission:
    sample_id: str
    pixels: np.ndarray  # H x W uint8
    category: str
    submitter: str
    role: str  # doctor | patient
    received_at: float = field(default_factory=time.time)
    status: str = "queued"  # queued | consumed | rejected


class SubmissionQueue:
    """Thread-safe store of labeled submissions; only doctor-role items are
    ever queued for training, patient items are stored but rejected."""

    def __init__(self):
        self._lock = threading.Lock()
        self._items: list[LabeledSubmission] = []

    def enqueue(self, sub: LabeledSubmission, known_categories) -> int:
        if sub.category not in set(known_categories):
            raise DomainError(f"unknown category {sub.category!r}")
        if sub.role not in ("doctor", "patient"):
            raise DomainError(f"unknown role {sub.role!r}")
        with self._lock:
            sub.status = "queued" if sub.role == "doctor" else "rejected"
            self._items.append(sub)
            return self._queued_count_locked()

    def _queued_count_locked(self) -> int:
        return sum(1 for s in self._items if s.status == "queued")

    def queued_count(self) -> int:
        with self._lock:
            return self._queued_count_locked()

    def consume_for_training(self) -> list[LabeledSubmission]:
        """Mark every queued doctor submission consumed and return them."""
        with self._lock:
            taken = [s for s in self._items if s.status == "queued"]
            for s in taken:
                s.status = "consumed"
            return taken

    def audit(self) -> list[LabeledSubmission]:
        with self._lock:
            return list(self._items)


# -- retrain policy --------------------------------------------------------------


@dataclass
class RetrainPolicy:
    trigger_threshold: int = 50
    epochs: int = 5
    guard_delta: float = 0.01
    n_pairs: int = 200
    like_fraction: float = 0.5
    batch_size: int = 16
    learning_rate: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.trigger_threshold < 1:
            raise DomainError(f"trigger threshold must be >= 1, got "
                              f"{self.trigger_threshold}")
        if self.guard_delta < 0:
            raise DomainError(f"guard delta must be >= 0, got {self.guard_delta}")


# -- checkpoint binary format -----------------------------------------------------


@dataclass
class ModelCheckpoint:
    """Versioned bundle of both networks' parameters plus the standard set.

    Parameter names carry an ``embed.`` or ``dagan.`` prefix. ``meta`` holds
    the network configurations needed to rebuild them, and anything the
    producer wants to note (timestamps, training provenance).
    """

    version: int
    params: dict[str, np.ndarray]
    standard: StandardSet
    meta: dict = field(default_factory=dict)

    def embed_state(self) -> dict[str, np.ndarray]:
        return {k[len(EMBED_PREFIX):]: v for k, v in self.params.items()
                if k.startswith(EMBED_PREFIX)}

    def dagan_state(self) -> dict[str, np.ndarray]:
        return {k[len(DAGAN_PREFIX):]: v for k, v in self.params.items()
                if k.startswith(DAGAN_PREFIX)}

    def save(self, path: str) -> None:
        """Serialize atomically: write a sibling temp file, then rename."""
        blob = self.to_bytes()
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def to_bytes(self) -> bytes:
        out = bytearray(MAGIC)
        out += struct.pack("<I", len(self.params))
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f4")
            encoded = name.encode("utf-8")
            out += struct.pack("<H", len(encoded)) + encoded
            out += struct.pack("<B", arr.ndim)
            out += struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.tobytes()
        cats = self.standard.categories()
        out += struct.pack("<I", len(cats))
        for cat in cats:
            encoded = cat.encode("utf-8")
            out += struct.pack("<H", len(encoded)) + encoded
            members = self.standard.members[cat]
            out += struct.pack("<I", len(members))
            for member_id, latent in members:
                mid = member_id.encode("utf-8")
                latent = np.ascontiguousarray(latent, dtype="<f4")
                out += struct.pack("<H", len(mid)) + mid
                out += struct.pack("<I", latent.size) + latent.tobytes()
        meta = json.dumps(self.meta, sort_keys=True).encode("utf-8")
        out += struct.pack("<I", len(meta)) + meta
        out += struct.pack("<Q", self.version)
        return bytes(out)

    @classmethod
    def load(cls, path: str) -> "ModelCheckpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        view = memoryview(data)
        if bytes(view[:len(MAGIC)]) != MAGIC:
            raise FormatError(f"bad checkpoint magic {bytes(view[:5])!r}", offset=0)
        pos = len(MAGIC)

        def unpack(fmt: str):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(data):
                raise FormatError("checkpoint truncated", offset=pos)
            values = struct.unpack_from(fmt, data, pos)
            pos += size
            return values

        def take(size: int) -> bytes:
            nonlocal pos
            if pos + size > len(data):
                raise FormatError("checkpoint truncated", offset=pos)
            chunk = bytes(view[pos:pos + size])
            pos += size
            return chunk

        params: dict[str, np.ndarray] = {}
        (n_params,) = unpack("<I")
        for _ in range(n_params):
            (name_len,) = unpack("<H")
            name = take(name_len).decode("utf-8")
            (ndim,) = unpack("<B")
            shape = unpack(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            raw = take(count * 4)
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        members: dict[str, list[tuple[str, np.ndarray]]] = {}
        (n_cats,) = unpack("<I")
        for _ in range(n_cats):
            (cat_len,) = unpack("<H")
            cat = take(cat_len).decode("utf-8")
            (n_members,) = unpack("<I")
            row = []
            for _ in range(n_members):
                (id_len,) = unpack("<H")
                member_id = take(id_len).decode("utf-8")
                (latent_len,) = unpack("<I")
                latent = np.frombuffer(take(latent_len * 4), dtype="<f4").copy()
                row.append((member_id, latent))
            members[cat] = row
        (meta_len,) = unpack("<I")
        meta = json.loads(take(meta_len).decode("utf-8")) if meta_len else {}
        (version,) = unpack("<Q")
        if pos != len(data):
            raise FormatError(f"{len(data) - pos} trailing bytes after version", offset=pos)
        return cls(version, params, StandardSet(members), meta)


def make_checkpoint(version: int, embed_net: EmbeddingNetwork,
                    generator: DaganGenerator | None, standard: StandardSet,
                    meta: dict | None = None) -> ModelCheckpoint:
    params = {EMBED_PREFIX + k: v for k, v in embed_net.state_dict().items()}
    full_meta = {"created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                 "embed": embed_net.config()}
    if generator is not None:
        params.update({DAGAN_PREFIX + k: v for k, v in generator.state_dict().items()})
        full_meta["dagan"] = generator.config()
    if meta:
        full_meta.update(meta)
    return ModelCheckpoint(version, params, standard, full_meta)


def build_embedding_network(ckpt: ModelCheckpoint,
                            trainable: bool = False) -> EmbeddingNetwork:
    cfg = ckpt.meta.get("embed")
    if cfg is None:
        raise StateError("checkpoint metadata lacks the embedding network config")
    net = EmbeddingNetwork.from_config(cfg)
    net.load_state(ckpt.embed_state())
    if not trainable:
        net.freeze()
    return net


def build_generator(ckpt: ModelCheckpoint) -> DaganGenerator | None:
    cfg = ckpt.meta.get("dagan")
    state = ckpt.dagan_state()
    if cfg is None or not state:
        return None
    gen = DaganGenerator(input_hw=tuple(cfg["input_hw"]), latent_dim=cfg["latent_dim"],
                         channels=tuple(cfg["channels"]),
                         noise_scale=cfg.get("noise_scale", 0.5))
    gen.load_state(state)
    gen.train_steps = 1  # restored parameters count as trained
    return gen


# -- serving registry --------------------------------------------------------------


@dataclass(frozen=True)
class ServingBundle:
    """An immutable view of one published checkpoint; a diagnosis holds a
    single bundle for its whole lifetime, so it never mixes versions."""

    version: int
    net: EmbeddingNetwork
    std: StandardSet
    checkpoint: ModelCheckpoint


class CheckpointRegistry:
    """Owns the serving checkpoint file and its in-memory bundle.

    ``publish`` persists to disk first (temp file + rename) and only then
    swaps the bundle reference, which is a single atomic assignment.
    """

    def __init__(self, path: str):
        self.path = path
        self._bundle: ServingBundle | None = None
        self._lock = threading.Lock()

    def load(self) -> ServingBundle:
        ckpt = ModelCheckpoint.load(self.path)
        bundle = ServingBundle(ckpt.version, build_embedding_network(ckpt),
                               ckpt.standard, ckpt)
        self._bundle = bundle
        return bundle

    def publish(self, ckpt: ModelCheckpoint) -> int:
        with self._lock:
            current = self._bundle
            if current is not None and ckpt.version <= current.version:
                raise StateError(f"checkpoint version {ckpt.version} does not "
                                 f"increase over {current.version}")
            ckpt.save(self.path)
            self._bundle = ServingBundle(ckpt.version, build_embedding_network(ckpt),
                                         ckpt.standard, ckpt)
            return ckpt.version

    def snapshot(self) -> ServingBundle:
        bundle = self._bundle
        if bundle is None:
            raise StateError("no checkpoint has been loaded or published")
        return bundle


# -- retraining ----------------------------------------------------------------------


class RetrainController:
    """Single-flight latch: at most one retraining job at a time."""

    def __init__(self):
        self._lock = threading.Lock()
        self._running = False

    @property
    def running(self) -> bool:
        return self._running

    def try_begin(self) -> bool:
        with self._lock:
            if self._running:
                return False
            self._running = True
            return True

    def finish(self) -> None:
        with self._lock:
            self._running = False


def maybe_trigger_retrain(policy: RetrainPolicy, queue: SubmissionQueue,
                          controller: RetrainController) -> str:
    """Start retraining iff the queue reached the threshold and nothing is
    already running; idempotent under repeated polling."""
    if queue.queued_count() < policy.trigger_threshold:
        return "no_action"
    if not controller.try_begin():
        return "no_action"
    return "training_started"


@dataclass
class RetrainOutcome:
    action: str  # swapped | kept
    version: int
    reason: str = ""
    old_accuracy: float = 0.0
    new_accuracy: float = 0.0


def _validation_accuracy(net, std: StandardSet, val_samples, target_hw) -> float:
    correct = 0
    for sample in val_samples:
        result = diagnose(normalize_resize(sample, target_hw), std, net,
                          with_attention=False)
        correct += result.predicted_category == sample.category
    return correct / len(val_samples)


def retrain_and_swap(policy: RetrainPolicy, queue: SubmissionQueue,
                     registry: CheckpointRegistry,
                     train_samples: list[ImageSample],
                     val_samples: list[ImageSample],
                     standard_images: dict[str, ImageSample]) -> RetrainOutcome:
    """Fine-tune on existing train data plus consumed queue submissions,
    then swap only if validation accuracy stays within the guard.

    The caller must have claimed the single-flight latch; consumed
    submissions are marked consumed whether or not the swap happens. DAGAN
    parameters are carried over unchanged.
    """
    if not val_samples:
        raise DomainError("retraining requires a non-empty validation set")
    current = registry.snapshot()
    target_hw = current.net.input_hw

    consumed = queue.consume_for_training()
    fresh = [ImageSample(f"queued-{s.sample_id}", s.pixels, s.category,
                         source="user", split="train") for s in consumed]
    union = list(train_samples) + fresh

    candidate = build_embedding_network(current.checkpoint, trainable=True)
    pairs = make_pairs(union, policy.n_pairs, policy.like_fraction,
                       policy.seed + current.version, target_hw)
    margin = float(current.checkpoint.meta.get("margin", 2.0))
    cfg = LossConfig(margin=margin)
    opt = T.Adam(candidate.parameters(), lr=policy.learning_rate)
    rng = np.random.default_rng(policy.seed + current.version)
    for _ in range(policy.epochs):
        train_epoch(pairs, candidate, cfg, opt, policy.batch_size, rng)
    candidate.freeze()

    def embed_standard(member_id: str) -> np.ndarray:
        sample = standard_images[member_id]
        return candidate.forward(normalize_resize(sample, target_hw)).data[0]

    candidate_std = current.std.with_latents(embed_standard)
    old_acc = _validation_accuracy(current.net, current.std, val_samples, target_hw)
    new_acc = _validation_accuracy(candidate, candidate_std, val_samples, target_hw)

    if new_acc < old_acc - policy.guard_delta:
        return RetrainOutcome("kept", current.version, "validation_regression",
                              old_acc, new_acc)

    params = dict(current.checkpoint.params)
    params.update({EMBED_PREFIX + k: v for k, v in candidate.state_dict().items()})
    meta = dict(current.checkpoint.meta)
    meta["retrained_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    meta["consumed_submissions"] = len(consumed)
    new_ckpt = ModelCheckpoint(current.version + 1, params, candidate_std, meta)
    try:
        new_version = registry.publish(new_ckpt)
    except OSError as exc:
        return RetrainOutcome("kept", current.version, f"io_error: {exc}",
                              old_acc, new_acc)
    return RetrainOutcome("swapped", new_version, "", old_acc, new_acc)
