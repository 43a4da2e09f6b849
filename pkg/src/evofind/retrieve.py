"""Evolution-aware scoring and ranking, plus the two heuristic baselines.

The full score is a fixed-weight blend of three terms: negative shape
distance (the geometric backbone), cosine similarity of the fused vectors,
and cosine similarity between the candidate and the historical prototype of
the query's identity.  The size-only and shape-only scorers exist as
controls and as degenerate cases of the same ranking machinery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Identity
from .embed import cosine
from .errors import EmptyPool
from .prototype import PrototypeBank
from .shape import ShapeScale, ShapeVector, shape_distance

DEFAULT_WEIGHTS = (0.70, 0.10, 0.20)

EVO_SCORER = "evo"
SHAPE_SCORER = "shape"
SIZE_SCORER = "size"
SCORER_NAMES = (EVO_SCORER, SHAPE_SCORER, SIZE_SCORER)


@dataclass(frozen=True)
class ScoreWeights:
    shape: float = DEFAULT_WEIGHTS[0]
    fusion: float = DEFAULT_WEIGHTS[1]
    prototype: float = DEFAULT_WEIGHTS[2]

    def __post_init__(self):
        if self.shape < 0 or self.fusion < 0 or self.prototype < 0:
            raise ValueError("score weights must be >= 0")


@dataclass(frozen=True)
class FunctionFeatures:
    """Everything the scorers need to know about one function."""

    address: int
    size: int
    shape: ShapeVector
    embedding: np.ndarray


@dataclass(frozen=True)
class ScoreParts:
    geometry: float
    fusion: float
    prototype: float
    total: float


@dataclass(frozen=True)
class RankedList:
    query_ref: int
    candidates: tuple[tuple[int, float, int], ...]  # (candidate addr, score, rank)
    pool_size: int


def evo_components(
    q: FunctionFeatures,
    c: FunctionFeatures,
    bank: PrototypeBank | None,
    query_identity: Identity | None,
    weights: ScoreWeights = ScoreWeights(),
    scale: ShapeScale = ShapeScale(),
) -> ScoreParts:
    """Per-term evidence for one (query, candidate) pair.

    The prototype term is 0 when the bank has no entry for the query's
    identity or either vector is zero.
    """
    r_s = -shape_distance(q.shape, c.shape, scale)
    r_f = cosine(q.embedding, c.embedding)
    proto = None
    if bank is not None and query_identity is not None:
        proto = bank.lookup(query_identity)
    r_p = cosine(c.embedding, proto) if proto is not None else 0.0
    total = weights.shape * r_s + weights.fusion * r_f + weights.prototype * r_p
    return ScoreParts(geometry=r_s, fusion=r_f, prototype=r_p, total=total)


def evo_score(
    q: FunctionFeatures,
    c: FunctionFeatures,
    bank: PrototypeBank | None,
    query_identity: Identity | None,
    weights: ScoreWeights = ScoreWeights(),
    scale: ShapeScale = ShapeScale(),
) -> float:
    return evo_components(q, c, bank, query_identity, weights, scale).total


def size_score(q: FunctionFeatures, c: FunctionFeatures) -> float:
    """Negative log-size gap; the weakest control."""
    return -abs(math.log(1 + q.size) - math.log(1 + c.size))


def shape_score(q: FunctionFeatures, c: FunctionFeatures,
                scale: ShapeScale = ShapeScale()) -> float:
    """Negative shape distance; geometry-only control."""
    return -shape_distance(q.shape, c.shape, scale)


def rank(
    q: FunctionFeatures,
    pool: Sequence[FunctionFeatures],
    scorer: Callable[[FunctionFeatures, FunctionFeatures], float],
) -> RankedList:
    """Score every candidate and sort descending.

    Ties break by ascending candidate address, then stable input order.
    """
    if not pool:
        raise EmptyPool("cannot rank an empty candidate pool")
    scored = [(scorer(q, c), c.address) for c in pool]
    order = sorted(range(len(pool)),
                   key=lambda i: (-scored[i][0], scored[i][1], i))
    candidates = tuple(
        (scored[i][1], scored[i][0], r + 1) for r, i in enumerate(order))
    return RankedList(query_ref=q.address, candidates=candidates,
                      pool_size=len(pool))


def rank_from_scores(query_addr: int, addresses: Sequence[int],
                     scores: np.ndarray) -> RankedList:
    """Build a RankedList from precomputed scores with the same tie rules."""
    n = len(addresses)
    if n == 0:
        raise EmptyPool("cannot rank an empty candidate pool")
    order = sorted(range(n), key=lambda i: (-scores[i], addresses[i], i))
    candidates = tuple(
        (addresses[i], float(scores[i]), r + 1) for r, i in enumerate(order))
    return RankedList(query_ref=query_addr, candidates=candidates, pool_size=n)


# --- vectorized batch scoring (identical results to the scalar path) ---------

def batch_scores(
    scorer_name: str,
    query_shapes: np.ndarray,        # (nq, 5)
    query_sizes: np.ndarray,         # (nq,)
    query_embeddings: np.ndarray,    # (nq, d)
    query_prototypes: np.ndarray | None,  # (nq, d) rows; zero row = absent
    pool_shapes: np.ndarray,         # (nc, 5)
    pool_sizes: np.ndarray,          # (nc,)
    pool_embeddings: np.ndarray,     # (nc, d)
    weights: ScoreWeights = ScoreWeights(),
    scale: ShapeScale = ShapeScale(),
) -> np.ndarray:
    """(nq, nc) score matrix for one candidate pool.

    The zero-vector cosine convention is applied rowwise, matching the
    scalar scorers exactly.
    """
    if scorer_name == SIZE_SCORER:
        lq = np.log1p(query_sizes)[:, None]
        lc = np.log1p(pool_sizes)[None, :]
        return -np.abs(lq - lc)

    alpha = scale.to_array()
    diff = (query_shapes[:, None, :] - pool_shapes[None, :, :]) / alpha
    d_s = np.einsum("qck,qck->qc", diff, diff)
    if scorer_name == SHAPE_SCORER:
        return -d_s
    if scorer_name != EVO_SCORER:
        raise ValueError(f"unknown scorer {scorer_name!r}")

    qn = np.linalg.norm(query_embeddings, axis=1)
    cn = np.linalg.norm(pool_embeddings, axis=1)
    denom = qn[:, None] * cn[None, :]
    dots = query_embeddings @ pool_embeddings.T
    with np.errstate(invalid="ignore", divide="ignore"):
        r_f = np.where(denom > 0.0, dots / np.where(denom == 0.0, 1.0, denom), 0.0)

    if query_prototypes is None:
        r_p = np.zeros_like(r_f)
    else:
        pn = np.linalg.norm(query_prototypes, axis=1)
        pden = pn[:, None] * cn[None, :]
        pdots = query_prototypes @ pool_embeddings.T
        r_p = np.where(pden > 0.0, pdots / np.where(pden == 0.0, 1.0, pden), 0.0)

    return weights.shape * (-d_s) + weights.fusion * r_f + weights.prototype * r_p
