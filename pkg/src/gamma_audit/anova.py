"""Type III sums of squares for main-effects factorial models and relative sensitivities.

With one observation per cell the residual of the main-effects model
holds every interaction; it is reported as a single pooled term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ComputationError,
    NonFiniteResponse,
    SingularFit,
    UnbalancedDesign,
    ZeroVariance,
)
from .gamma import METRICS

# Negative SS within this fraction of the total is rounding noise.
_SS_FLOOR = 1e-9


@dataclass(frozen=True)
class AnovaTable:
    terms: Tuple[str, ...]
    ss: np.ndarray
    df: np.ndarray
    ss_residual: float
    df_residual: int
    ss_total: float
    df_total: int

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.terms, map(float, self.ss)))


@dataclass(frozen=True)
class SensitivityVector:
    """Share of total variance per factor, plus the pooled-interaction share.

    ``reason`` is set (and ``values`` is all NaN) when the sensitivities are
    undefined for this response, e.g. a constant response.
    """

    labels: Tuple[str, ...]
    values: np.ndarray
    reason: Optional[str] = None

    @property
    def defined(self) -> bool:
        return self.reason is None

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.labels, map(float, self.values)))


def sum_to_zero(levels: np.ndarray, n_levels: int) -> np.ndarray:
    """Deviation coding: column k is +1 at level k, -1 at the last level, else 0."""
    levels = np.asarray(levels)
    cols = np.zeros((levels.size, n_levels - 1))
    for k in range(n_levels - 1):
        cols[levels == k, k] = 1.0
    cols[levels == n_levels - 1, :] = -1.0
    return cols


def check_balanced(levels: np.ndarray, n_levels: Sequence[int]) -> None:
    """Require a complete factorial with exactly one observation per cell."""
    levels = np.asarray(levels)
    n = levels.shape[0]
    for f, L in enumerate(n_levels):
        counts = np.bincount(levels[:, f], minlength=L)
        if len(counts) != L or np.any(counts != n // L) or n % L:
            raise UnbalancedDesign(f"factor {f} level counts {counts.tolist()} are not equal")
    if n != int(np.prod(n_levels)) or len({tuple(r) for r in levels.tolist()}) != n:
        raise UnbalancedDesign(
            f"{n} observations do not form a complete factorial of {int(np.prod(n_levels))} cells"
        )


def _sse(X: np.ndarray, y: np.ndarray) -> float:
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise SingularFit(f"design matrix has rank {rank} < {X.shape[1]} columns")
    resid = y - X @ beta
    return float(resid @ resid)


def type3_ss(
    levels,
    response,
    n_levels: Optional[Sequence[int]] = None,
    terms: Optional[Sequence[str]] = None,
) -> AnovaTable:
    """Type III SS of each main effect: SSE without the term minus SSE of the full model.

    ``levels`` is an ``(N, F)`` array of level indices, ``response`` the N
    observations.
    """
    levels = np.asarray(levels, dtype=int)
    y = np.asarray(response, dtype=float)
    if levels.ndim != 2 or levels.shape[0] != y.size:
        raise ValueError("levels must be (N, F) with N == len(response)")
    n, nf = levels.shape
    if n_levels is None:
        n_levels = [int(levels[:, f].max()) + 1 for f in range(nf)]
    if terms is None:
        terms = [f"F{k + 1:02d}" for k in range(nf)]
    if not np.all(np.isfinite(y)):
        raise NonFiniteResponse("response contains NaN or infinity")
    check_balanced(levels, n_levels)

    df = np.array([L - 1 for L in n_levels])
    df_total = n - 1
    df_resid = int(df_total - df.sum())
    if np.all(y == y[0]):
        return AnovaTable(tuple(terms), np.zeros(nf), df, 0.0, df_resid, 0.0, df_total)

    blocks = [sum_to_zero(levels[:, f], L) for f, L in enumerate(n_levels)]
    ones = np.ones((n, 1))
    sse_full = _sse(np.hstack([ones, *blocks]), y)
    ss_total = float(((y - y.mean()) ** 2).sum())
    ss = np.empty(nf)
    for f in range(nf):
        reduced = np.hstack([ones, *(b for g, b in enumerate(blocks) if g != f)])
        ss[f] = _sse(reduced, y) - sse_full
    ss = _clamp(ss, ss_total)
    return AnovaTable(tuple(terms), ss, df, sse_full, df_resid, ss_total, df_total)


def _clamp(ss: np.ndarray, total: float) -> np.ndarray:
    if np.any(ss < -_SS_FLOOR * total):
        raise ComputationError(f"negative sum of squares {ss.min():g} beyond rounding")
    return np.maximum(ss, 0.0)


def relative_sensitivities(anova: AnovaTable, pooled_label: str = "F10") -> SensitivityVector:
    """Each term's SS over the total SS; the residual share is the pooled interaction term."""
    if not anova.ss_total > 0:
        raise ZeroVariance("response has zero total variance")
    values = np.append(anova.ss, anova.ss_residual) / anova.ss_total
    return SensitivityVector((*anova.terms, pooled_label), values)


def sensitivity_sweep(table, metrics: Optional[Sequence[str]] = None):
    """Relative sensitivities for every (centre, metric) of a result table.

    Returns ``{centre: {metric: SensitivityVector}}``; entries that cannot be
    computed carry a ``reason`` instead of values.
    """
    metrics = list(METRICS if metrics is None else metrics)
    col = {m: METRICS.index(m) for m in metrics}
    terms = [f.id for f in table.factors]
    n_levels = [len(f.levels) for f in table.factors]
    labels = (*terms, "F10")
    out: Dict[str, Dict[str, SensitivityVector]] = {}
    for centre in table.centres():
        rows = table.rows_for(centre)
        failed = [r for r in rows if not r.ok]
        out[centre] = {}
        for m in metrics:
            try:
                if failed:
                    raise UnbalancedDesign(f"{len(failed)} design points failed for {centre}")
                levels = np.array([r.point for r in rows], dtype=int)
                y = np.array([r.result.values()[col[m]] for r in rows])
                vec = relative_sensitivities(type3_ss(levels, y, n_levels, terms))
            except ComputationError as exc:
                vec = SensitivityVector(
                    labels, np.full(len(labels), np.nan), f"{type(exc).__name__}: {exc}"
                )
            out[centre][m] = vec
    return out
