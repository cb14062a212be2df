"""Diagnosis: embed the query, compare against every standard-set member
per category, average the energies, and pick the argmin category."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import StandardSet
from .errors import DomainError
from .siamese import energy
from .tensor import Tensor


@dataclass
class Diagnosis:
    predicted_category: str
    per_category_mean_energy: dict[str, float]
    per_member_energies: dict[str, list[float]]
    checkpoint_version: int
    attention_map: np.ndarray | None = None


def class_energies(query: Tensor, std: StandardSet, net,
                   ) -> tuple[dict[str, float], dict[str, list[float]]]:
    """Mean and per-member energies of the query against each category's
    cached standard-set latents."""
    if not std.members:
        raise DomainError("standard set is empty")
    zq = net.forward(query).data[0]
    means: dict[str, float] = {}
    members: dict[str, list[float]] = {}
    for category, row in std.members.items():
        if not row:
            raise DomainError(f"standard set category {category!r} has no members")
        values = [energy(zq, latent) for _, latent in row]
        members[category] = values
        means[category] = float(sum(values) / len(values))
    return means, members


def pick_category(means: dict[str, float]) -> str:
    """Argmin of mean energies; ties broken by lexicographically smallest name."""
    return min(sorted(means), key=lambda c: means[c])


def diagnose(query: Tensor, std: StandardSet, net, checkpoint_version: int = 0,
             with_attention: bool = True) -> Diagnosis:
    means, members = class_energies(query, std, net)
    attention = None
    if with_attention:
        attention = net.attention_map(query)[0]
    return Diagnosis(pick_category(means), means, members, checkpoint_version, attention)


@dataclass
class EnergyStats:
    count: int = 0
    minimum: float = 0.0
    maximum: float = 0.0
    mean: float = 0.0

    @classmethod
    def of(cls, values: list[float]) -> "EnergyStats":
        if not values:
            return cls()
        return cls(len(values), float(min(values)), float(max(values)),
                   float(sum(values) / len(values)))


@dataclass
class DissimilarityReport:
    """Energies of (test image, standard member) comparisons bucketed into
    same-category and different-category sides."""

    like: EnergyStats = field(default_factory=EnergyStats)
    unlike: EnergyStats = field(default_factory=EnergyStats)

    @property
    def separated(self) -> bool:
        return (self.like.count > 0 and self.unlike.count > 0
                and self.like.maximum < self.unlike.minimum)

    @property
    def mean_ratio(self) -> float:
        if self.like.mean <= 0:
            return float("inf") if self.unlike.mean > 0 else 0.0
        return self.unlike.mean / self.like.mean

    def to_json_dict(self) -> dict:
        def stats(s: EnergyStats) -> dict:
            return {"count": s.count, "min": round(s.minimum, 6),
                    "max": round(s.maximum, 6), "mean": round(s.mean, 6)}

        return {"like": stats(self.like), "unlike": stats(self.unlike),
                "mean_ratio": (round(self.mean_ratio, 6)
                               if self.mean_ratio != float("inf") else None)}


def dissimilarity_report(samples, std: StandardSet, net,
                         normalize_fn) -> DissimilarityReport:
    """Bucketed energy statistics over every (sample, standard member) pair.

    ``normalize_fn`` maps an ImageSample to the network's input tensor.
    """
    samples = list(samples)
    if not samples:
        raise DomainError("dissimilarity report requires a non-empty sample list")
    like: list[float] = []
    unlike: list[float] = []
    for sample in samples:
        _, members = class_energies(normalize_fn(sample), std, net)
        for category, values in members.items():
            (like if category == sample.category else unlike).extend(values)
    return DissimilarityReport(EnergyStats.of(like), EnergyStats.of(unlike))
