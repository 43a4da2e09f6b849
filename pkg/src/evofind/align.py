"""Bidirectional anonymous alignment.

Matches stripped functions to labeled functions inside one (version, arch)
bucket using only geometry: each side searches a bounded window around its
log-size coordinate, takes the nearest neighbor under the scaled shape
distance, and a pair is accepted only if the two directions agree and the
distance stays under the threshold.  Accepted anchors carry the normalized
identity of the labeled function, which is the only place names enter the
pipeline.
"""
from __future__ import annotations

import csv
import io
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .corpus import (
    Arch,
    BinaryId,
    FunctionRecord,
    Identity,
    STRIPPED,
    SymbolRecord,
    UNSTRIPPED,
    normalize_identity,
)
from .errors import ArchMismatch, EmptyPool, VersionMismatch
from .shape import ShapeScale, ShapeVector, shape_matrix

DEFAULT_WINDOW = 96
DEFAULT_THRESHOLD = 0.20


@dataclass(frozen=True)
class AlignConfig:
    window: int = DEFAULT_WINDOW
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.threshold <= 0:
            raise ValueError("threshold must be > 0")


@dataclass(frozen=True)
class MatchAnchor:
    stripped_ref: tuple[BinaryId, int]
    labeled_ref: tuple[BinaryId, int]
    identity: Identity
    distance: float

    @property
    def version(self) -> str:
        return self.stripped_ref[0].version

    @property
    def arch(self) -> Arch:
        return self.stripped_ref[0].arch


@dataclass
class DistanceCounter:
    """Counts shape-distance evaluations for the cost-bound check."""

    count: int = 0

    def add(self, n: int) -> None:
        self.count += n


@dataclass(frozen=True)
class PoolEntry:
    """One alignment candidate: primary coordinate, address, full shape."""

    s1: float
    address: int
    shape: ShapeVector
    index: int = 0   # position in the caller's original list


def _window_lo(s1: list[float], addrs: list[int], probe: float, w: int) -> int:
    """Start of the w-wide contiguous window of s1 values nearest the probe.

    Exact distance ties at the expansion boundary prefer the lower address.
    """
    n = len(s1)
    if w >= n:
        return 0
    left = bisect_left(s1, probe) - 1
    right = left + 1
    for _ in range(w):
        if left < 0:
            right += 1
        elif right >= n:
            left -= 1
        else:
            dl = probe - s1[left]
            dr = s1[right] - probe
            if dl < dr:
                left -= 1
            elif dr < dl:
                right += 1
            elif addrs[left] <= addrs[right]:
                left -= 1
            else:
                right += 1
    return left + 1


def top_window(sorted_pool: list[PoolEntry], probe: float, w: int) -> list[PoolEntry]:
    """The w pool entries whose s1 values are nearest the probe.

    The pool must already be sorted ascending by s1; the result is the
    contiguous window around the probe's insertion point (the whole pool
    when w >= len(pool)).
    """
    if not sorted_pool:
        raise EmptyPool("empty candidate pool")
    if w < 1:
        raise ValueError("window must be >= 1")
    s1 = [e.s1 for e in sorted_pool]
    addrs = [e.address for e in sorted_pool]
    lo = _window_lo(s1, addrs, probe, w)
    return sorted_pool[lo:lo + min(w, len(sorted_pool))]


@dataclass
class _Side:
    """One side of the alignment, sorted by (s1, address)."""

    s1: list[float]
    addrs: list[int]
    shapes: np.ndarray          # (n, 5), sorted order
    orig: np.ndarray            # sorted position -> original index
    sorted_of_orig: np.ndarray  # original index -> sorted position

    @classmethod
    def build(cls, shapes: list[ShapeVector], addresses: list[int]) -> "_Side":
        mat = shape_matrix(shapes)
        order = sorted(range(len(shapes)),
                       key=lambda i: (shapes[i].log_size, addresses[i]))
        orig = np.array(order, dtype=np.int64)
        inv = np.empty(len(order), dtype=np.int64)
        inv[orig] = np.arange(len(order))
        return cls(
            s1=[shapes[i].log_size for i in order],
            addrs=[addresses[i] for i in order],
            shapes=mat[orig],
            orig=orig,
            sorted_of_orig=inv,
        )


def _nearest(query_shapes: np.ndarray, query_s1: list[float], pool: _Side,
             w: int, alpha: np.ndarray,
             counter: DistanceCounter | None) -> tuple[np.ndarray, np.ndarray]:
    """Windowed nearest neighbor of every query in the pool.

    Returns (original pool indices, distances).  Ties on the distance are
    broken by the lower pool address; addresses are unique within a binary,
    so this is a total order.
    """
    m = len(query_s1)
    n = len(pool.s1)
    w_eff = min(w, n)
    lo = np.empty(m, dtype=np.int64)
    for i, probe in enumerate(query_s1):
        lo[i] = _window_lo(pool.s1, pool.addrs, probe, w)
    window_idx = lo[:, None] + np.arange(w_eff)[None, :]
    cand = pool.shapes[window_idx]                       # (m, w_eff, 5)
    diff = (query_shapes[:, None, :] - cand) / alpha
    dist = np.einsum("mwk,mwk->mw", diff, diff)
    if counter is not None:
        counter.add(m * w_eff)
    rowmin = dist.min(axis=1)
    addrs = np.asarray(pool.addrs, dtype=np.uint64)[window_idx]
    tied_addrs = np.where(dist == rowmin[:, None], addrs,
                          np.iinfo(np.uint64).max)
    pick = tied_addrs.argmin(axis=1)
    chosen = window_idx[np.arange(m), pick]
    return pool.orig[chosen], rowmin


def bidirectional_align(
    labeled_binary: BinaryId,
    labeled: list[tuple[SymbolRecord, ShapeVector]],
    stripped_binary: BinaryId,
    stripped: list[tuple[FunctionRecord, ShapeVector]],
    config: AlignConfig = AlignConfig(),
    scale: ShapeScale = ShapeScale(),
    counter: DistanceCounter | None = None,
) -> list[MatchAnchor]:
    """Mutual windowed nearest-neighbor matching within one bucket.

    Each accepted anchor is the unique mutual pair (s, l) with
    distance <= threshold; no function appears in two anchors.  Output is
    sorted by stripped address and deterministic given the inputs.
    """
    if labeled_binary.arch != stripped_binary.arch:
        raise ArchMismatch(
            f"{labeled_binary.arch} vs {stripped_binary.arch}")
    if labeled_binary.version != stripped_binary.version:
        raise VersionMismatch(
            f"{labeled_binary.version} vs {stripped_binary.version}")
    if not labeled or not stripped:
        return []

    alpha = scale.to_array()
    lab_side = _Side.build([sv for _, sv in labeled],
                           [rec.address for rec, _ in labeled])
    strip_side = _Side.build([sv for _, sv in stripped],
                             [rec.address for rec, _ in stripped])

    lab_shapes = shape_matrix([sv for _, sv in labeled])
    strip_shapes = shape_matrix([sv for _, sv in stripped])

    # forward: nearest stripped neighbor of every labeled function
    b_s, _ = _nearest(lab_shapes, [sv.log_size for _, sv in labeled],
                      strip_side, config.window, alpha, counter)
    # reverse: nearest labeled neighbor of every stripped function
    b_l, dist_l = _nearest(strip_shapes, [sv.log_size for _, sv in stripped],
                           lab_side, config.window, alpha, counter)

    anchors = []
    order = sorted(range(len(stripped)), key=lambda i: stripped[i][0].address)
    for i in order:
        j = int(b_l[i])
        if dist_l[i] <= config.threshold and int(b_s[j]) == i:
            sym = labeled[j][0]
            anchors.append(MatchAnchor(
                stripped_ref=(stripped_binary, stripped[i][0].address),
                labeled_ref=(labeled_binary, sym.address),
                identity=normalize_identity(sym.name),
                distance=float(dist_l[i]),
            ))
    return anchors


# --- anchor dump -------------------------------------------------------------

_ANCHOR_COLUMNS = ("version", "arch", "stripped_addr", "labeled_addr",
                   "identity", "distance")


def anchors_to_csv(anchors: list[MatchAnchor]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_ANCHOR_COLUMNS)
    for a in anchors:
        writer.writerow([
            a.version, a.arch.tag,
            f"0x{a.stripped_ref[1]:x}", f"0x{a.labeled_ref[1]:x}",
            a.identity.name, repr(a.distance),
        ])
    return buf.getvalue()


def anchors_from_csv(text: str) -> list[MatchAnchor]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != list(_ANCHOR_COLUMNS):
        raise ValueError(f"bad anchor dump header: {header}")
    out = []
    for row in reader:
        version, arch_tag, s_addr, l_addr, identity, distance = row
        arch = Arch.parse(arch_tag)
        out.append(MatchAnchor(
            stripped_ref=(BinaryId(version, arch, STRIPPED), int(s_addr, 16)),
            labeled_ref=(BinaryId(version, arch, UNSTRIPPED), int(l_addr, 16)),
            identity=Identity(identity),
            distance=float(distance),
        ))
    return out
