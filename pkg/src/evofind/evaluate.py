"""Retrieval evaluation: first-hit ranks, Hit@k, MRR@10, inspection metrics,
and the directed cross-architecture protocol with query-count weighting.

A query's rank is the position of the first correct candidate, clipped to 11
when nothing correct appears in the top 10; the clip value also feeds Mean
Inspected@10, so misses cost 11 inspected functions.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from itertools import permutations
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Identity
from .errors import EmptyQuerySet, LeakageError, TruthNotInPool, ZeroPool
from .retrieve import RankedList, ScoreWeights, batch_scores

MISS_RANK = 11   # encodes "no hit in top 10"


@dataclass(frozen=True)
class QueryOutcome:
    query_ref: int
    first_hit_rank: int     # 1..11
    pool_size: int

    def __post_init__(self):
        if not 1 <= self.first_hit_rank <= MISS_RANK:
            raise ValueError("first_hit_rank must lie in [1, 11]")


@dataclass(frozen=True)
class PairReport:
    version: str
    source_arch: str
    target_arch: str
    query_count: int
    hit_at_1: float
    hit_at_5: float
    hit_at_10: float
    mrr_at_10: float
    mean_inspected_at_10: float


@dataclass(frozen=True)
class EvalSummary:
    """Query-count-weighted aggregate over all evaluated pairs."""

    pair_count: int
    query_count: int
    hit_at_1: float
    hit_at_5: float
    hit_at_10: float
    mrr_at_10: float
    mean_inspected_at_10: float
    mean_pool_size: float
    inspection_reduction_value: float
    skipped_pairs: tuple[tuple[str, str, str], ...] = ()
    queries_without_truth: int = 0


def first_hit_rank(ranked: RankedList, truth: set[int]) -> int:
    """Smallest rank of any correct candidate, clipped to 11 past the top 10."""
    if not truth:
        raise TruthNotInPool("empty truth set")
    pool_addrs = {addr for addr, _, _ in ranked.candidates}
    if not truth <= pool_addrs:
        raise TruthNotInPool(f"truth {truth - pool_addrs} not in pool")
    best = min(r for addr, _, r in ranked.candidates if addr in truth)
    return best if best <= 10 else MISS_RANK


def _ranks(outcomes: Sequence[QueryOutcome]) -> list[int]:
    if not outcomes:
        raise EmptyQuerySet("no query outcomes")
    return [o.first_hit_rank for o in outcomes]


def mrr_at_10(outcomes: Sequence[QueryOutcome]) -> float:
    ranks = _ranks(outcomes)
    return sum(1.0 / r for r in ranks if r <= 10) / len(ranks)


def hit_at_k(outcomes: Sequence[QueryOutcome], k: int) -> float:
    if k not in (1, 5, 10):
        raise ValueError("k must be 1, 5 or 10")
    ranks = _ranks(outcomes)
    return sum(1 for r in ranks if r <= k) / len(ranks)


def mean_inspected_at_10(outcomes: Sequence[QueryOutcome]) -> float:
    ranks = _ranks(outcomes)
    return sum(ranks) / len(ranks)


def inspection_reduction(mean_rank: float, mean_pool: float) -> float:
    """Fraction of the candidate pool an auditor never has to open."""
    if mean_pool <= 0:
        raise ZeroPool("mean pool size must be positive")
    return 1.0 - mean_rank / mean_pool


def pair_report(version: str, source_arch: str, target_arch: str,
                outcomes: Sequence[QueryOutcome]) -> PairReport:
    return PairReport(
        version=version,
        source_arch=source_arch,
        target_arch=target_arch,
        query_count=len(outcomes),
        hit_at_1=hit_at_k(outcomes, 1),
        hit_at_5=hit_at_k(outcomes, 5),
        hit_at_10=hit_at_k(outcomes, 10),
        mrr_at_10=mrr_at_10(outcomes),
        mean_inspected_at_10=mean_inspected_at_10(outcomes),
    )


def weighted_summary(
    reports: Sequence[PairReport],
    outcomes_by_pair: Mapping[tuple[str, str, str], Sequence[QueryOutcome]],
    skipped_pairs: Sequence[tuple[str, str, str]] = (),
    queries_without_truth: int = 0,
) -> EvalSummary:
    """Aggregate pair reports, each metric weighted by per-pair query count.

    Equals the pooled per-query computation by construction.
    """
    total = sum(r.query_count for r in reports)
    if total == 0:
        raise EmptyQuerySet("no queries across all pairs")

    def wmean(values: Iterable[float]) -> float:
        return sum(v * r.query_count for v, r in zip(values, reports)) / total

    all_outcomes = [o for outs in outcomes_by_pair.values() for o in outs]
    mean_pool = sum(o.pool_size for o in all_outcomes) / len(all_outcomes)
    mean_rank = wmean(r.mean_inspected_at_10 for r in reports)
    return EvalSummary(
        pair_count=len(reports),
        query_count=total,
        hit_at_1=wmean(r.hit_at_1 for r in reports),
        hit_at_5=wmean(r.hit_at_5 for r in reports),
        hit_at_10=wmean(r.hit_at_10 for r in reports),
        mrr_at_10=wmean(r.mrr_at_10 for r in reports),
        mean_inspected_at_10=mean_rank,
        mean_pool_size=mean_pool,
        inspection_reduction_value=inspection_reduction(mean_rank, mean_pool),
        skipped_pairs=tuple(skipped_pairs),
        queries_without_truth=queries_without_truth,
    )


_REPORT_COLUMNS = ("version", "source_arch", "target_arch", "query_count",
                   "hit_at_1", "hit_at_5", "hit_at_10", "mrr_at_10",
                   "mean_inspected_at_10")


def reports_to_csv(reports: Sequence[PairReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_REPORT_COLUMNS)
    for r in reports:
        writer.writerow([r.version, r.source_arch, r.target_arch,
                         r.query_count, repr(r.hit_at_1), repr(r.hit_at_5),
                         repr(r.hit_at_10), repr(r.mrr_at_10),
                         repr(r.mean_inspected_at_10)])
    return buf.getvalue()


def reports_from_csv(text: str) -> list[PairReport]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != list(_REPORT_COLUMNS):
        raise ValueError(f"bad pair report header: {header}")
    out = []
    for row in reader:
        out.append(PairReport(
            version=row[0], source_arch=row[1], target_arch=row[2],
            query_count=int(row[3]), hit_at_1=float(row[4]),
            hit_at_5=float(row[5]), hit_at_10=float(row[6]),
            mrr_at_10=float(row[7]), mean_inspected_at_10=float(row[8])))
    return out


# --- directed cross-architecture protocol ------------------------------------

PairKey = tuple[str, str, str]   # (version, source arch, target arch)


@dataclass(frozen=True)
class Task1Result:
    scorer: str
    reports: tuple[PairReport, ...]
    summary: EvalSummary
    outcomes_by_pair: Mapping[PairKey, tuple[QueryOutcome, ...]]


@dataclass
class _BucketView:
    addrs: list[int]
    sizes: np.ndarray
    instrs: np.ndarray
    shapes: np.ndarray        # (n, 5) raw descriptors
    embeddings: np.ndarray    # (n, 361)
    identity_of: dict[int, str]   # anchored addresses only


def _bucket_view(corpus, index, bucket) -> _BucketView:
    from .shape import shape_matrix, shape_descriptors

    _, records = corpus.load_export(bucket)
    kept = [r for r in records if r.size > 0]
    shapes = shape_descriptors(kept, index.config.neighborhood)
    addrs, embeddings = index.embeddings(bucket)
    if addrs != [r.address for r in kept]:
        raise TruthNotInPool(
            f"index vectors for {bucket} do not match the corpus export")
    identity_of = index.anchor_identity_map().get(bucket, {})
    return _BucketView(
        addrs=addrs,
        sizes=np.array([r.size for r in kept], dtype=np.float64),
        instrs=np.array([r.instruction_count for r in kept], dtype=np.float64),
        shapes=shape_matrix(shapes),
        embeddings=embeddings,
        identity_of=identity_of,
    )


def _clipped_rank(scores: np.ndarray, addrs: np.ndarray,
                  truth_idx: Sequence[int]) -> int:
    """First-hit rank under (score desc, address asc) ordering, clipped."""
    best = MISS_RANK
    for t in truth_idx:
        better = (scores > scores[t]) | (
            (scores == scores[t]) & (addrs < addrs[t]))
        rank = 1 + int(np.count_nonzero(better))
        if rank < best:
            best = min(best, rank if rank <= 10 else MISS_RANK)
    return best


def run_task1(
    corpus,
    index,
    scorers: Sequence[str] = ("evo", "shape", "size"),
    weights: ScoreWeights | None = None,
) -> dict[str, Task1Result]:
    """Directed cross-architecture retrieval over every version past the
    training cutoff.

    Queries are anchored stripped functions passing the size filter; the
    pool is every stripped function of the target bucket; truth is any
    candidate anchored to the same identity.  Queries whose identity has no
    candidate in the target pool are excluded and counted.  Pairs with a
    missing bucket are skipped and recorded, not fatal.
    """
    from .corpus import version_key, version_lt

    cfg = index.config
    if weights is None:
        weights = ScoreWeights(shape=cfg.weight_shape, fusion=cfg.weight_fusion,
                               prototype=cfg.weight_prototype)
    scale = _shape_scale(cfg)
    eval_versions = [v for v in corpus.versions()
                     if not version_lt(v, index.cutoff)]
    if not eval_versions:
        raise LeakageError(
            "index cutoff excludes nothing: every corpus version is part of "
            "the training slice")

    arches = corpus.arches()
    outcomes: dict[str, dict[PairKey, list[QueryOutcome]]] = {
        s: {} for s in scorers}
    skipped: list[PairKey] = []
    no_truth = 0

    for version in eval_versions:
        views: dict[str, _BucketView | None] = {}
        for arch in arches:
            bucket = (version, arch)
            views[arch] = (_bucket_view(corpus, index, bucket)
                           if bucket in corpus.exports else None)
        for src, dst in permutations(arches, 2):
            key = (version, src, dst)
            qv, cv = views[src], views[dst]
            if qv is None or cv is None or not cv.addrs:
                skipped.append(key)
                continue

            truth_of_identity: dict[str, list[int]] = {}
            addr_row = {a: i for i, a in enumerate(cv.addrs)}
            for addr, ident in cv.identity_of.items():
                truth_of_identity.setdefault(ident, []).append(addr_row[addr])

            q_idx, q_truth, q_ident = [], [], []
            for i, addr in enumerate(qv.addrs):
                ident = qv.identity_of.get(addr)
                if ident is None:
                    continue
                if (qv.sizes[i] < cfg.min_query_size
                        or qv.instrs[i] < cfg.min_query_instructions):
                    continue
                truth = truth_of_identity.get(ident)
                if not truth:
                    no_truth += 1
                    continue
                q_idx.append(i)
                q_truth.append(truth)
                q_ident.append(ident)
            if not q_idx:
                skipped.append(key)
                continue

            rows = np.array(q_idx)
            proto = np.zeros((len(q_idx), cv.embeddings.shape[1]))
            for r, ident in enumerate(q_ident):
                vec = index.bank.lookup(Identity(ident))
                if vec is not None:
                    proto[r] = vec
            cand_addrs = np.asarray(cv.addrs, dtype=np.int64)
            for scorer in scorers:
                matrix = batch_scores(
                    scorer,
                    qv.shapes[rows], qv.sizes[rows], qv.embeddings[rows],
                    proto, cv.shapes, cv.sizes, cv.embeddings,
                    weights=weights, scale=scale)
                pair_outcomes = [
                    QueryOutcome(
                        query_ref=qv.addrs[q_idx[r]],
                        first_hit_rank=_clipped_rank(
                            matrix[r], cand_addrs, q_truth[r]),
                        pool_size=len(cv.addrs))
                    for r in range(len(q_idx))
                ]
                outcomes[scorer][key] = pair_outcomes

    results = {}
    for scorer in scorers:
        per_pair = outcomes[scorer]
        reports = tuple(
            pair_report(v, s, t, per_pair[(v, s, t)])
            for (v, s, t) in sorted(per_pair,
                                    key=lambda k: (version_key(k[0]), k[1], k[2]))
        )
        summary = weighted_summary(
            reports,
            {k: tuple(v) for k, v in per_pair.items()},
            skipped_pairs=tuple(sorted(set(skipped))),
            queries_without_truth=no_truth,
        )
        results[scorer] = Task1Result(
            scorer=scorer, reports=reports, summary=summary,
            outcomes_by_pair={k: tuple(v) for k, v in per_pair.items()})
    return results


def _shape_scale(cfg):
    from .shape import ShapeScale

    return ShapeScale(alpha=tuple(cfg.shape_scale))
