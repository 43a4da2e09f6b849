"""Multi-view function representation.

Token and context multisets become TF-IDF-weighted, signed-feature-hashed
dense vectors (256-d and 64-d).  Graph statistics become a fixed 36-d vector
of log terms, densities, mean block width, and two histograms.  Graph and
shape views are standardized per architecture with training-split moments,
and everything is concatenated into one 361-d vector:

    [tokens 0..255 | graph 256..291 | contexts 292..355 | shape 356..360]
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Arch, FunctionRecord, N_EDGE_TYPES, N_OP_CLASSES
from .errors import EmptyCorpus, EmptyTraining, SchemaViolation
from .shape import ShapeVector

TOKEN_SPACE = "token"
CONTEXT_SPACE = "context"

TOKEN_DIM = 256
CONTEXT_DIM = 64
GRAPH_DIM = 4 + 6 + 1 + N_OP_CLASSES + N_EDGE_TYPES   # 36
SHAPE_DIM = 5
FUSED_DIM = TOKEN_DIM + GRAPH_DIM + CONTEXT_DIM + SHAPE_DIM  # 361

TOKEN_SLICE = slice(0, 256)
GRAPH_SLICE = slice(256, 292)
CONTEXT_SLICE = slice(292, 356)
SHAPE_SLICE = slice(356, 361)

DEFAULT_EPSILON = 1e-6

# Blocks rarely have more than two CFG successors, so edge density is
# normalized against 2 edges per block and clamped.
_EDGES_PER_BLOCK_CAP = 2

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a; the fixed, platform-independent hashing primitive."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


@lru_cache(maxsize=None)
def _term_slot(term: str, dim: int) -> tuple[int, float]:
    """(bucket index, sign) of a term under signed feature hashing."""
    index = fnv1a64(term.encode("utf-8")) % dim
    sign_bit = fnv1a64(("s:" + term).encode("utf-8")) >> 63
    return index, -1.0 if sign_bit else 1.0


@dataclass(frozen=True)
class IdfTable:
    """Document frequencies for one term space, fitted on the training split."""

    space: str
    doc_count: int
    df: Mapping[str, int]

    def idf(self, term: str) -> float:
        return math.log((1 + self.doc_count) / (1 + self.df.get(term, 0))) + 1.0

    def to_json(self) -> str:
        doc = {
            "schema_version": "1",
            "space": self.space,
            "doc_count": self.doc_count,
            "df": {t: self.df[t] for t in sorted(self.df)},
        }
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "IdfTable":
        doc = json.loads(text)
        if doc.get("schema_version") != "1":
            raise SchemaViolation("unsupported idf table schema_version")
        return cls(space=doc["space"], doc_count=int(doc["doc_count"]),
                   df={str(k): int(v) for k, v in doc["df"].items()})


def fit_idf(training_functions: Sequence[FunctionRecord], space: str) -> IdfTable:
    """Document frequency per term, one document per function."""
    if space not in (TOKEN_SPACE, CONTEXT_SPACE):
        raise ValueError(f"unknown term space {space!r}")
    if not training_functions:
        raise EmptyCorpus("cannot fit IDF on an empty training slice")
    df: Counter[str] = Counter()
    for fn in training_functions:
        terms = fn.tokens if space == TOKEN_SPACE else fn.contexts
        df.update(set(terms))
    return IdfTable(space=space, doc_count=len(training_functions), df=dict(df))


def hashed_embedding(terms: Iterable[str], idf: IdfTable, dim: int) -> np.ndarray:
    """Signed feature hashing of TF-IDF weights, L2-normalized.

    Empty input stays the zero vector.
    """
    if dim not in (TOKEN_DIM, CONTEXT_DIM):
        raise ValueError(f"dim must be {TOKEN_DIM} or {CONTEXT_DIM}")
    vec = np.zeros(dim, dtype=np.float64)
    for term, tf in Counter(terms).items():
        index, sign = _term_slot(term, dim)
        vec[index] += sign * tf * idf.idf(term)
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def graph_vector(fn: FunctionRecord) -> np.ndarray:
    """36-d structural summary of one function.

    Densities are counts over instructions (edges over 2 per block), clamped
    to [0, 1]; histograms are normalized to unit mass or all-zero.
    """
    i_f = fn.instruction_count
    b_f = fn.block_count
    e_f = fn.edge_count
    logs = [math.log(1 + fn.size), math.log(1 + i_f),
            math.log(1 + b_f), math.log(1 + e_f)]
    denom = max(1, i_f)
    dens = [
        fn.call_count / denom,
        fn.branch_count / denom,
        fn.ret_count / denom,
        fn.string_ref_count / denom,
        fn.const_ref_count / denom,
        e_f / (_EDGES_PER_BLOCK_CAP * max(1, b_f)),
    ]
    dens = [min(1.0, max(0.0, d)) for d in dens]
    mean_bb = i_f / max(1, b_f)
    h_op = (np.array(fn.op_class_counts, dtype=np.float64) / i_f
            if i_f > 0 else np.zeros(N_OP_CLASSES))
    h_edge = (np.array(fn.edge_type_counts, dtype=np.float64) / e_f
              if e_f > 0 else np.zeros(N_EDGE_TYPES))
    return np.concatenate([logs, dens, [mean_bb], h_op, h_edge])


_GLOBAL = "*"


@dataclass(frozen=True)
class ArchMoments:
    """Per-architecture standardization moments for graph and shape views.

    Architectures absent from the training split (or with a single member)
    fall back to the global moments stored under ``*``.
    """

    graph_mean: Mapping[str, np.ndarray]
    graph_std: Mapping[str, np.ndarray]
    shape_mean: Mapping[str, np.ndarray]
    shape_std: Mapping[str, np.ndarray]
    epsilon: float = DEFAULT_EPSILON

    def _key(self, arch: Arch) -> str:
        return arch.tag if arch.tag in self.graph_mean else _GLOBAL

    def normalize_graph(self, arch: Arch, g: np.ndarray) -> np.ndarray:
        k = self._key(arch)
        return (g - self.graph_mean[k]) / (self.graph_std[k] + self.epsilon)

    def normalize_shape(self, arch: Arch, s: np.ndarray) -> np.ndarray:
        k = self._key(arch)
        return (s - self.shape_mean[k]) / (self.shape_std[k] + self.epsilon)

    def to_json(self) -> str:
        def block(k):
            return {
                "graph_mean": self.graph_mean[k].tolist(),
                "graph_std": self.graph_std[k].tolist(),
                "shape_mean": self.shape_mean[k].tolist(),
                "shape_std": self.shape_std[k].tolist(),
            }
        doc = {
            "schema_version": "1",
            "epsilon": self.epsilon,
            "moments": {k: block(k) for k in sorted(self.graph_mean)},
        }
        return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ArchMoments":
        doc = json.loads(text)
        if doc.get("schema_version") != "1":
            raise SchemaViolation("unsupported moments schema_version")
        gm, gs, sm, ss = {}, {}, {}, {}
        for k, blk in doc["moments"].items():
            gm[k] = np.array(blk["graph_mean"], dtype=np.float64)
            gs[k] = np.array(blk["graph_std"], dtype=np.float64)
            sm[k] = np.array(blk["shape_mean"], dtype=np.float64)
            ss[k] = np.array(blk["shape_std"], dtype=np.float64)
        return cls(graph_mean=gm, graph_std=gs, shape_mean=sm, shape_std=ss,
                   epsilon=float(doc["epsilon"]))


def fit_arch_moments(
    training: Sequence[tuple[Arch, np.ndarray, ShapeVector]],
    epsilon: float = DEFAULT_EPSILON,
) -> ArchMoments:
    """Componentwise mean and population std per architecture.

    ``training`` pairs each anchored function's architecture with its graph
    vector and shape descriptor.  The global entry always exists and backs
    architectures with fewer than two members.
    """
    if not training:
        raise EmptyTraining("cannot fit moments on an empty training slice")
    by_arch: dict[str, list[int]] = {}
    graph = np.array([g for _, g, _ in training], dtype=np.float64)
    shapes = np.array([s.to_tuple() for _, _, s in training], dtype=np.float64)
    for i, (arch, _, _) in enumerate(training):
        by_arch.setdefault(arch.tag, []).append(i)

    gm = {_GLOBAL: graph.mean(axis=0)}
    gs = {_GLOBAL: graph.std(axis=0)}
    sm = {_GLOBAL: shapes.mean(axis=0)}
    ss = {_GLOBAL: shapes.std(axis=0)}
    for tag, idx in by_arch.items():
        if len(idx) < 2:
            continue
        gm[tag] = graph[idx].mean(axis=0)
        gs[tag] = graph[idx].std(axis=0)
        sm[tag] = shapes[idx].mean(axis=0)
        ss[tag] = shapes[idx].std(axis=0)
    return ArchMoments(graph_mean=gm, graph_std=gs, shape_mean=sm,
                       shape_std=ss, epsilon=epsilon)


@dataclass(frozen=True)
class IdfTables:
    tokens: IdfTable
    contexts: IdfTable


def fuse(
    fn: FunctionRecord,
    shape: ShapeVector,
    arch: Arch,
    idf_tables: IdfTables,
    moments: ArchMoments,
) -> np.ndarray:
    """Concatenate the four views into the fixed 361-d representation."""
    t = hashed_embedding(fn.tokens, idf_tables.tokens, TOKEN_DIM)
    c = hashed_embedding(fn.contexts, idf_tables.contexts, CONTEXT_DIM)
    g = moments.normalize_graph(arch, graph_vector(fn))
    s = moments.normalize_shape(arch, shape.to_array())
    z = np.concatenate([t, g, c, s])
    assert z.shape == (FUSED_DIM,)
    return z


def fuse_all(
    functions: Sequence[FunctionRecord],
    shapes: Sequence[ShapeVector],
    arch: Arch,
    idf_tables: IdfTables,
    moments: ArchMoments,
) -> np.ndarray:
    """(n, 361) embedding matrix for one binary."""
    if not functions:
        return np.zeros((0, FUSED_DIM), dtype=np.float64)
    return np.stack([fuse(fn, sv, arch, idf_tables, moments)
                     for fn, sv in zip(functions, shapes)])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with the zero-vector convention cos(x, 0) = 0."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
