"""Binary-level patch-state proxy.

Nine whole-binary statistics feed a nearest-centroid classifier over the
two patch-state classes; evaluation holds out one architecture at a time,
fitting centroids on the remaining architectures only.  Ties predict
vulnerable, the safe default for auditing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingClass, NoFunctions
from .corpus import version_key

VULNERABLE = 0
PATCHED = 1

METRIC_NAMES = ("size_mb", "n_sym", "n_ana", "mean_size", "med_size",
                "p90_size", "p99_size", "n_sec", "n_debug")
METRIC_DIM = len(METRIC_NAMES)

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class BinaryMetrics:
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != METRIC_DIM:
            raise ValueError(f"need exactly {METRIC_DIM} metric values")

    def to_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


@dataclass(frozen=True)
class LabeledBinary:
    arch: str
    version: str
    metrics: BinaryMetrics
    # set when n_sym had to be zero-filled because no unstripped twin exists
    n_sym_missing: bool = False


@dataclass(frozen=True)
class CentroidModel:
    mean: Mapping[int, np.ndarray]
    std: Mapping[int, np.ndarray]
    epsilon: float = DEFAULT_EPSILON


@dataclass(frozen=True)
class FoldReport:
    held_out_arch: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def binary_metrics(
    file_size_bytes: int,
    n_sym: int,
    n_ana: int,
    function_sizes: Sequence[int],
    n_sec: int = 0,
    n_debug: int = 0,
) -> BinaryMetrics:
    """Nine-component statistics vector for one binary.

    Percentiles use linear interpolation on the sorted size list.
    """
    if not function_sizes:
        raise NoFunctions("binary metrics need at least one function")
    sizes = np.sort(np.asarray(function_sizes, dtype=np.float64))
    return BinaryMetrics(values=(
        file_size_bytes / (1024.0 * 1024.0),
        float(n_sym),
        float(n_ana),
        float(sizes.mean()),
        float(np.percentile(sizes, 50)),
        float(np.percentile(sizes, 90)),
        float(np.percentile(sizes, 99)),
        float(n_sec),
        float(n_debug),
    ))


def fit_centroids(train: Sequence[tuple[int, BinaryMetrics]],
                  epsilon: float = DEFAULT_EPSILON) -> CentroidModel:
    """Per-class componentwise mean and population standard deviation."""
    by_class: dict[int, list[np.ndarray]] = {VULNERABLE: [], PATCHED: []}
    for label, metrics in train:
        if label not in by_class:
            raise ValueError(f"label must be 0 or 1, got {label}")
        by_class[label].append(metrics.to_array())
    missing = [y for y, rows in by_class.items() if not rows]
    if missing:
        raise MissingClass(f"no training binaries for class(es) {missing}")
    mean = {y: np.mean(rows, axis=0) for y, rows in by_class.items()}
    std = {y: np.std(rows, axis=0) for y, rows in by_class.items()}
    return CentroidModel(mean=mean, std=std, epsilon=epsilon)


def predict(model: CentroidModel, metrics: BinaryMetrics) -> int:
    """Closest standardized class centroid; exact ties predict vulnerable."""
    m = metrics.to_array()
    dist = {
        y: float(np.linalg.norm(
            (m - model.mean[y]) / (model.std[y] + model.epsilon)))
        for y in (VULNERABLE, PATCHED)
    }
    return VULNERABLE if dist[VULNERABLE] <= dist[PATCHED] else PATCHED


def _confusion(labels: Sequence[int], preds: Sequence[int]) -> tuple[int, int, int, int]:
    tp = sum(1 for t, p in zip(labels, preds) if t == PATCHED and p == PATCHED)
    fp = sum(1 for t, p in zip(labels, preds) if t == VULNERABLE and p == PATCHED)
    tn = sum(1 for t, p in zip(labels, preds) if t == VULNERABLE and p == VULNERABLE)
    fn = sum(1 for t, p in zip(labels, preds) if t == PATCHED and p == VULNERABLE)
    return tp, fp, tn, fn


def fold_scores(labels: Sequence[int], preds: Sequence[int],
                held_out_arch: str) -> FoldReport:
    tp, fp, tn, fn = _confusion(labels, preds)
    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return FoldReport(
        held_out_arch=held_out_arch,
        accuracy=(tp + tn) / total if total else 0.0,
        precision=precision, recall=recall, f1=f1,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def patch_label(version: str, cve_boundary: str) -> int:
    """Patched iff the version is at or past the fix boundary."""
    return PATCHED if version_key(version) >= version_key(cve_boundary) else VULNERABLE


def holdout_eval(
    binaries: Sequence[LabeledBinary],
    cve_boundary: str,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[list[FoldReport], dict[str, float]]:
    """Hold one architecture out at a time; report per-fold and mean scores.

    Training never sees the held-out architecture, so perturbing test
    binaries cannot change the fitted centroids.
    """
    arches = sorted({b.arch for b in binaries})
    if len(arches) < 2:
        raise ValueError("need at least two architectures to hold one out")
    reports = []
    for arch in arches:
        train = [(patch_label(b.version, cve_boundary), b.metrics)
                 for b in binaries if b.arch != arch]
        model = fit_centroids(train, epsilon=epsilon)
        test = [b for b in binaries if b.arch == arch]
        labels = [patch_label(b.version, cve_boundary) for b in test]
        preds = [predict(model, b.metrics) for b in test]
        reports.append(fold_scores(labels, preds, held_out_arch=arch))
    means = {
        "accuracy": sum(r.accuracy for r in reports) / len(reports),
        "precision": sum(r.precision for r in reports) / len(reports),
        "recall": sum(r.recall for r in reports) / len(reports),
        "f1": sum(r.f1 for r in reports) / len(reports),
    }
    return reports, means


def folds_to_csv(reports: Sequence[FoldReport], means: dict[str, float]) -> str:
    lines = ["held_out_arch,accuracy,precision,recall,f1,tp,fp,tn,fn"]
    for r in reports:
        lines.append(f"{r.held_out_arch},{r.accuracy!r},{r.precision!r},"
                     f"{r.recall!r},{r.f1!r},{r.tp},{r.fp},{r.tn},{r.fn}")
    lines.append(f"mean,{means['accuracy']!r},{means['precision']!r},"
                 f"{means['recall']!r},{means['f1']!r},,,,")
    return "\n".join(lines) + "\n"
