"""Desk-scale synthetic grayscale corpus: horizontal bars, vertical bars
and centered Gaussian blobs with randomized geometry and additive noise."""

from __future__ import annotations

import os

import numpy as np

from .data import DatasetManifest, ManifestRecord, encode_pgm
from .errors import DomainError

CATEGORIES = ("hbar", "vbar", "blob")


def synth_image(category: str, rng, noise_level: float = 0.1,
                hw: tuple[int, int] = (64, 64)) -> np.ndarray:
    h, w = hw
    img = np.full((h, w), 30.0)
    if category == "hbar":
        thickness = int(rng.integers(max(h // 8, 2), max(h // 4, 3)))
        top = int(rng.integers(2, h - thickness - 2))
        img[top:top + thickness, :] = 220.0
    elif category == "vbar":
        thickness = int(rng.integers(max(w // 8, 2), max(w // 4, 3)))
        left = int(rng.integers(2, w - thickness - 2))
        img[:, left:left + thickness] = 220.0
    elif category == "blob":
        cy = h / 2 + rng.uniform(-h / 16, h / 16)
        cx = w / 2 + rng.uniform(-w / 16, w / 16)
        sigma = rng.uniform(h / 8, h / 5)
        ys, xs = np.mgrid[0:h, 0:w]
        img += 200.0 * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma ** 2))
    else:
        raise DomainError(f"unknown synthetic category {category!r}, "
                          f"expected one of {CATEGORIES}")
    if noise_level > 0:
        img += rng.normal(0, noise_level * 255.0, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def generate_corpus(out_dir: str, categories=CATEGORIES, n_per_category: int = 20,
                    noise_level: float = 0.1, seed: int = 0,
                    hw: tuple[int, int] = (64, 64)) -> DatasetManifest:
    """Write PGM files plus a manifest.tsv; deterministic per seed."""
    if n_per_category < 1:
        raise DomainError(f"n_per_category must be >= 1, got {n_per_category}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for category in categories:
        for i in range(n_per_category):
            sid = f"{category}-{i:04d}"
            rel = f"{sid}.pgm"
            pixels = synth_image(category, rng, noise_level, hw)
            with open(os.path.join(out_dir, rel), "wb") as fh:
                fh.write(encode_pgm(pixels))
            records.append(ManifestRecord(sid, rel, category, "real", "unassigned"))
    manifest = DatasetManifest(records, out_dir)
    manifest.save(os.path.join(out_dir, "manifest.tsv"))
    return manifest
