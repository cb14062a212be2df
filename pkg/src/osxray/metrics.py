"""Evaluation arithmetic: accuracy, Gaussian-proportion confidence
intervals, and confusion statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

# two-sided 99% by default; reproduces the reported interval shapes
DEFAULT_Z = 2.576


def accuracy_and_ci(predictions, truths, z: float = DEFAULT_Z) -> tuple[float, float]:
    """Proportion correct and the Wald half-width z*sqrt(p(1-p)/n)."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise DomainError(f"length mismatch: {len(predictions)} predictions vs "
                          f"{len(truths)} truths")
    if not predictions:
        raise DomainError("cannot evaluate an empty prediction list")
    n = len(predictions)
    p = sum(a == b for a, b in zip(predictions, truths)) / n
    return p, ci_half_width(p, n, z)


def ci_half_width(p: float, n: int, z: float = DEFAULT_Z) -> float:
    if not 0 <= p <= 1:
        raise DomainError(f"proportion must be in [0,1], got {p}")
    if n < 1:
        raise DomainError(f"sample count must be >= 1, got {n}")
    return z * math.sqrt(p * (1.0 - p) / n)


def confusion_stats(predictions, truths, categories):
    """Confusion matrix plus per-category sensitivity and specificity.

    Returns (matrix, sensitivity, specificity) where matrix[i][j] counts
    samples of true category i predicted as category j.
    """
    categories = list(categories)
    index = {c: i for i, c in enumerate(categories)}
    matrix = np.zeros((len(categories), len(categories)), dtype=np.int64)
    for pred, truth in zip(predictions, truths):
        if pred not in index:
            raise DomainError(f"unknown predicted category {pred!r}")
        if truth not in index:
            raise DomainError(f"unknown true category {truth!r}")
        matrix[index[truth], index[pred]] += 1
    total = matrix.sum()
    sensitivity: dict[str, float] = {}
    specificity: dict[str, float] = {}
    for c, i in index.items():
        tp = matrix[i, i]
        fn = matrix[i].sum() - tp
        fp = matrix[:, i].sum() - tp
        tn = total - tp - fn - fp
        sensitivity[c] = tp / (tp + fn) if tp + fn else 0.0
        specificity[c] = tn / (tn + fp) if tn + fp else 0.0
    return matrix, sensitivity, specificity


@dataclass
class EvalReport:
    n: int
    accuracy: float
    ci_half_width: float
    z: float
    categories: list[str]
    confusion: np.ndarray
    sensitivity: dict[str, float] = field(default_factory=dict)
    specificity: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, predictions, truths, categories=None,
                         z: float = DEFAULT_Z) -> "EvalReport":
        predictions = list(predictions)
        truths = list(truths)
        if categories is None:
            categories = sorted(set(truths) | set(predictions))
        p, half = accuracy_and_ci(predictions, truths, z)
        matrix, sens, spec = confusion_stats(predictions, truths, categories)
        return cls(len(truths), p, half, z, list(categories), matrix, sens, spec)

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": round(self.accuracy, 6),
            "ci_half_width": round(self.ci_half_width, 6),
            "z": self.z,
            "categories": self.categories,
            "confusion": self.confusion.tolist(),
            "sensitivity": {c: round(v, 6) for c, v in self.sensitivity.items()},
            "specificity": {c: round(v, 6) for c, v in self.specificity.items()},
        }

    def to_text(self) -> str:
        width = max([8] + [len(c) for c in self.categories])
        lines = [
            f"samples:  {self.n}",
            f"accuracy: {self.accuracy * 100:.2f}% +/- "
            f"{self.ci_half_width * 100:.2f}% (z={self.z})",
            "",
            " " * (width + 2) + "  ".join(c.rjust(width) for c in self.categories),
        ]
        for i, c in enumerate(self.categories):
            row = "  ".join(str(int(v)).rjust(width) for v in self.confusion[i])
            lines.append(f"{c.rjust(width)}  {row}")
        lines.append("")
        for c in self.categories:
            lines.append(f"{c.rjust(width)}  sensitivity {self.sensitivity[c]:.3f}"
                         f"  specificity {self.specificity[c]:.3f}")
        return "\n".join(lines)
