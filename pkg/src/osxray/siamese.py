"""Contrastive training of the twin embedding network.

A pair carries a binary label y: 0 when both images belong to the same
disease category, 1 otherwise. The per-pair objective is
(1-y) * d^2 + y * max(0, margin - d)^2 on the Euclidean latent distance d,
summed over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError
from .tensor import Tensor

# keeps sqrt differentiable when twin latents coincide
_NORM_EPS = 1e-12


@dataclass
class PairSample:
    """Two normalized images and their like/unlike label."""

    x1: Tensor
    x2: Tensor
    y: int
    id1: str = ""
    id2: str = ""
    category1: str = ""
    category2: str = ""

    def __post_init__(self):
        if self.y not in (0, 1):
            raise DomainError(f"pair label must be 0 or 1, got {self.y}")


@dataclass
class LossConfig:
    margin: float = 2.0

    def __post_init__(self):
        if self.margin <= 0:
            raise DomainError(f"margin must be positive, got {self.margin}")


def energy(z1, z2) -> float:
    """Euclidean distance between two latent vectors."""
    a = z1.data if isinstance(z1, Tensor) else np.asarray(z1, dtype=np.float64)
    b = z2.data if isinstance(z2, Tensor) else np.asarray(z2, dtype=np.float64)
    a = a.reshape(-1)
    b = b.reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"latent lengths differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a.astype(np.float64) - b.astype(np.float64)) ** 2)))


def contrastive_loss(d: float, y: int, cfg: LossConfig = LossConfig()) -> float:
    """Eq-style two-branch objective on a precomputed energy value."""
    if y not in (0, 1):
        raise DomainError(f"label must be 0 or 1, got {y}")
    if d < 0:
        raise DomainError(f"energy must be nonnegative, got {d}")
    if y == 0:
        return d * d
    hinge = max(0.0, cfg.margin - d)
    return hinge * hinge


def pair_energies(z1: Tensor, z2: Tensor) -> Tensor:
    """Differentiable per-row Euclidean distances for a batch of latent pairs."""
    if z1.shape != z2.shape:
        raise ShapeError(f"latent batches differ: {z1.shape} vs {z2.shape}")
    diff = z1 - z2
    return T.sqrt((diff * diff).sum(axis=1) + T.full([z1.shape[0]], _NORM_EPS))


def batch_loss(pairs: list[PairSample], net, cfg: LossConfig = LossConfig()) -> Tensor:
    """Sum of per-pair contrastive losses over the batch, differentiable."""
    if not pairs:
        raise DomainError("batch of pairs must be non-empty")
    x1 = T.concat([p.x1 for p in pairs], axis=0)
    x2 = T.concat([p.x2 for p in pairs], axis=0)
    z1 = net.forward(x1)
    z2 = net.forward(x2)
    diff = z1 - z2
    sq_dist = (diff * diff).sum(axis=1)
    d = T.sqrt(sq_dist + T.full([len(pairs)], _NORM_EPS))
    y = Tensor(np.array([p.y for p in pairs], dtype=np.float32))
    like = (Tensor(np.ones(len(pairs), dtype=np.float32)) - y) * sq_dist
    hinge = T.relu(T.full([len(pairs)], cfg.margin) - d)
    unlike = y * (hinge * hinge)
    return (like + unlike).sum()


def train_epoch(pairs: list[PairSample], net, cfg: LossConfig, optimizer,
                batch_size: int = 16, rng=None) -> float:
    """One pass over the pairs; returns the mean per-pair loss."""
    if not pairs:
        raise DomainError("cannot train on an empty pair list")
    if batch_size < 1:
        raise DomainError(f"batch size must be >= 1, got {batch_size}")
    order = np.arange(len(pairs))
    if rng is not None:
        rng.shuffle(order)
    total = 0.0
    for start in range(0, len(order), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        loss = batch_loss(chunk, net, cfg)
        T.backward(loss)
        optimizer.step()
        total += loss.item()
    return total / len(pairs)
