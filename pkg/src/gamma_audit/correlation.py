"""Pearson correlation matrices over metrics, centres and factor sensitivities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConstantInput, LengthMismatch, MisalignedDesigns, TooFewSamples
from .gamma import METRICS

# |r| may exceed 1 by this much from rounding before it counts as a bug.
_CLAMP_TOL = 1e-12
MIN_SAMPLES = 3


def _clamp(r):
    r = np.asarray(r, dtype=float)
    excess = np.abs(r[np.isfinite(r)]) - 1.0
    if excess.size and excess.max() > _CLAMP_TOL:
        raise FloatingPointError(f"correlation magnitude exceeds 1 by {excess.max():g}")
    return np.clip(r, -1.0, 1.0)


def pearson(x, y) -> float:
    """Sample Pearson coefficient, two-pass (centre first, then accumulate)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantInput("correlation with a constant vector is undefined")
    xc = x - x.mean()
    yc = y - y.mean()
    return float(_clamp((xc @ yc) / math.sqrt((xc @ xc) * (yc @ yc))))


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric Pearson matrix; NaN entries are undefined (a constant variable)."""

    labels: Tuple[str, ...]
    r: np.ndarray
    n_samples: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.r)

    def undefined_labels(self) -> List[str]:
        return [lab for lab, ok in zip(self.labels, np.diag(self.defined)) if not ok]

    def get(self, a: str, b: str) -> float:
        return float(self.r[self.labels.index(a), self.labels.index(b)])

    def mean_off_diagonal(self, label: str) -> float:
        k = self.labels.index(label)
        row = np.delete(self.r[k], k)
        return float(np.nanmean(row))


def correlation_matrix(data, labels: Sequence[str]) -> CorrelationMatrix:
    """Pearson matrix of the columns of ``data`` (samples x variables).

    Columns that are constant get NaN rows and columns, including the
    diagonal; every other diagonal entry is exactly 1.
    """
    data = np.asarray(data, dtype=float)
    n, p = data.shape
    if p != len(labels):
        raise LengthMismatch(f"{p} columns but {len(labels)} labels")
    if n < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {n}")
    const = np.all(data == data[0], axis=0)
    xc = data - data.mean(axis=0)
    ss = np.einsum("ij,ij->j", xc, xc)
    scale = np.where(const, np.nan, np.sqrt(ss))
    z = xc / np.where(const, 1.0, scale)
    r = z.T @ z
    r = 0.5 * (r + r.T)
    r[const, :] = np.nan
    r[:, const] = np.nan
    r = _clamp(r)
    diag = np.arange(p)
    r[diag[~const], diag[~const]] = 1.0
    return CorrelationMatrix(tuple(labels), r, np.full((p, p), n, dtype=int))


def metric_column(metric: str, gic: Optional[int] = None) -> str:
    """``("gpr", 1)`` -> ``"gpr_gic1"``; full metric names pass through."""
    name = metric if gic is None else f"{metric}_gic{gic}"
    if name not in METRICS:
        raise KeyError(f"unknown metric {name!r}")
    return name


def metric_correlation(table) -> CorrelationMatrix:
    """12 x 12 matrix over all successful rows, pooled across centres and design points."""
    rows = table.ok_rows()
    return correlation_matrix(table.metric_matrix(rows), METRICS)


def _aligned_points(table) -> Tuple[List[str], List[Tuple[int, ...]]]:
    centres = table.centres()
    point_lists = [[r.point for r in table.rows_for(c)] for c in centres]
    ref = point_lists[0]
    for c, pts in zip(centres, point_lists):
        if sorted(pts) != sorted(ref) or len(set(pts)) != len(pts):
            raise MisalignedDesigns(f"centre {c} was not evaluated on the same design points")
    failed = {r.point for r in table.rows if not r.ok}
    return centres, [p for p in sorted(ref) if p not in failed]


def center_correlation(table, metric: str, gic: Optional[int] = None) -> CorrelationMatrix:
    """Centres x centres matrix of one metric, aligned by design point.

    Points that failed at any centre are dropped for all centres.
    """
    col = METRICS.index(metric_column(metric, gic))
    centres, points = _aligned_points(table)
    data = np.empty((len(points), len(centres)))
    for j, c in enumerate(centres):
        by_point = {r.point: r for r in table.rows_for(c)}
        data[:, j] = [by_point[p].result.values()[col] for p in points]
    return correlation_matrix(data, centres)


def factor_correlation(sweep: Dict[str, Dict], metric: str, gic: Optional[int] = None) -> CorrelationMatrix:
    """Factors x factors matrix of relative sensitivities across centres."""
    name = metric_column(metric, gic)
    vectors = [per[name] for per in sweep.values() if per[name].defined]
    if len(vectors) < MIN_SAMPLES:
        raise TooFewSamples(
            f"{len(vectors)} centres have defined sensitivities for {name}, need {MIN_SAMPLES}"
        )
    data = np.array([v.values for v in vectors])
    return correlation_matrix(data, vectors[0].labels)
