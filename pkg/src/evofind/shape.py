"""Per-binary geometric prior.

Each function gets a 5-dimensional descriptor built purely from its location
and size inside the current binary:

    [log_size, addr_norm, rank_norm, neighborhood_mean, delta]

with log_size = ln(1 + size), addr_norm and rank_norm affinely normalized to
[0, 1], neighborhood_mean the mean log-size over up to two address-neighbors
on each side, and delta = log_size - neighborhood_mean.  Distances between
descriptors are squared component gaps scaled by a positive vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import EmptyInput, UnsortedInput

DEFAULT_SHAPE_SCALE = (1.0, 0.20, 0.20, 1.0, 1.0)
DEFAULT_NEIGHBORHOOD = 2


class Locatable(Protocol):
    address: int
    size: int


@dataclass(frozen=True)
class ShapeVector:
    log_size: float
    addr_norm: float
    rank_norm: float
    neighborhood_mean: float
    delta: float

    def to_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.log_size, self.addr_norm, self.rank_norm,
                self.neighborhood_mean, self.delta)

    def to_array(self) -> np.ndarray:
        return np.array(self.to_tuple(), dtype=np.float64)


@dataclass(frozen=True)
class ShapeScale:
    alpha: tuple[float, float, float, float, float] = DEFAULT_SHAPE_SCALE

    def __post_init__(self):
        if len(self.alpha) != 5 or any(a <= 0 for a in self.alpha):
            raise ValueError("shape scale needs 5 positive components")

    def to_array(self) -> np.ndarray:
        return np.array(self.alpha, dtype=np.float64)


def shape_descriptors(
    functions: Sequence[Locatable],
    neighborhood: int = DEFAULT_NEIGHBORHOOD,
) -> list[ShapeVector]:
    """Compute one descriptor per function of an address-sorted binary.

    Degenerate single-function binaries get addr_norm 0.5, rank_norm 0 and
    delta 0 so every component stays finite.
    """
    n = len(functions)
    if n == 0:
        raise EmptyInput("need at least one function")
    addrs = [f.address for f in functions]
    for i in range(1, n):
        if addrs[i] <= addrs[i - 1]:
            raise UnsortedInput(
                f"addresses must be strictly ascending at index {i}")
    sizes = [f.size for f in functions]
    if any(s <= 0 for s in sizes):
        raise ValueError("all sizes must be > 0 (filter zero-size symbols first)")

    log_sizes = [math.log(1 + s) for s in sizes]
    a_min, a_max = addrs[0], addrs[-1]
    span = a_max - a_min

    out = []
    for i in range(n):
        addr_norm = 0.5 if span == 0 else (addrs[i] - a_min) / span
        rank_norm = 0.0 if n == 1 else i / (n - 1)
        lo = max(0, i - neighborhood)
        hi = min(n, i + neighborhood + 1)
        nbhd = log_sizes[lo:i] + log_sizes[i + 1:hi]
        mean = log_sizes[i] if not nbhd else sum(nbhd) / len(nbhd)
        out.append(ShapeVector(
            log_size=log_sizes[i],
            addr_norm=addr_norm,
            rank_norm=rank_norm,
            neighborhood_mean=mean,
            delta=log_sizes[i] - mean,
        ))
    return out


def shape_distance(a: ShapeVector, b: ShapeVector,
                   scale: ShapeScale = ShapeScale()) -> float:
    """Scaled squared distance; symmetric, zero iff the vectors are equal."""
    total = 0.0
    for x, y, alpha in zip(a.to_tuple(), b.to_tuple(), scale.alpha):
        d = (x - y) / alpha
        total += d * d
    return total


def shape_matrix(shapes: Sequence[ShapeVector]) -> np.ndarray:
    """Stack descriptors into an (n, 5) float64 array."""
    return np.array([s.to_tuple() for s in shapes], dtype=np.float64)


def shape_distance_matrix(a: np.ndarray, b: np.ndarray,
                          scale: ShapeScale = ShapeScale()) -> np.ndarray:
    """All-pairs scaled distances between (n,5) and (m,5) stacks."""
    alpha = scale.to_array()
    diff = (a[:, None, :] - b[None, :, :]) / alpha
    return np.einsum("nmk,nmk->nm", diff, diff)
