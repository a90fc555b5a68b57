"""Gamma index and companion dose-comparison metrics.

All metrics are evaluated at the nodes of the *evaluated* grid selected by
a mask; reference dose at those positions (and at every search candidate)
comes from bilinear sampling of the reference grid. The dose criterion is
global: a percentage of the maximum reference dose over the masked nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np

from .errors import EmptyMap, EmptyMask, FormatError, GeometryMismatch, ZeroMass
from .grid import MIN_MASK_NODES, DoseGrid, bilinear_index, snap

# gamma <= 1 passes; the slack absorbs rounding on exact-threshold offsets.
GAMMA_PASS_TOL = 1e-9
# Dose agreement tolerance for DTA, relative to the normalization dose.
DTA_DOSE_TOL = 1e-6

_BLOCK = 4096


@dataclass(frozen=True)
class GammaCriterion:
    dose_pct: float
    dist_mm: float
    name: str = ""

    def __post_init__(self):
        if not (self.dose_pct > 0 and self.dist_mm > 0):
            raise FormatError("gamma criterion needs dose_pct > 0 and dist_mm > 0")

    def __str__(self):
        label = f"{self.dose_pct:g}%/{self.dist_mm:g}mm"
        return f"{self.name} ({label})" if self.name else label


GIC1 = GammaCriterion(5.0, 2.0, "GIC1")
GIC2 = GammaCriterion(3.0, 2.0, "GIC2")
GIC3 = GammaCriterion(2.0, 2.0, "GIC3")
GIC4 = GammaCriterion(5.0, 1.0, "GIC4")
GICS = (GIC1, GIC2, GIC3, GIC4)


@dataclass(frozen=True)
class GammaOptions:
    search_radius_factor: float = 3.0
    subsample_step_factor: float = 10.0
    low_dose_cutoff_pct: float = 10.0
    normalization: str = "global"

    def __post_init__(self):
        if not self.search_radius_factor >= 1:
            raise FormatError("search_radius_factor must be >= 1")
        if not self.subsample_step_factor >= 2:
            raise FormatError("subsample_step_factor must be >= 2")
        if not 0 <= self.low_dose_cutoff_pct < 100:
            raise FormatError("low_dose_cutoff_pct must be in [0, 100)")
        if self.normalization != "global":
            raise FormatError("only global normalization is supported")


@dataclass(frozen=True)
class CandidateSet:
    """Search displacements on a square sub-grid, clipped to a disc.

    Candidates are sorted by distance and grouped into bands of one step
    width; ``band_r0[b]`` is a lower bound on the distance of every
    candidate in band ``b`` and beyond.
    """

    step: float
    radius: float
    k: np.ndarray
    l: np.ndarray
    bands: Tuple[slice, ...]
    band_r0: np.ndarray

    @property
    def ox(self) -> np.ndarray:
        return self.k * self.step

    @property
    def oy(self) -> np.ndarray:
        return self.l * self.step

    @property
    def r(self) -> np.ndarray:
        return np.hypot(self.ox, self.oy)

    def __len__(self):
        return len(self.k)


@lru_cache(maxsize=32)
def candidate_set(dist_mm: float, opt: GammaOptions = GammaOptions()) -> CandidateSet:
    step = dist_mm / opt.subsample_step_factor
    radius = opt.search_radius_factor * dist_mm
    span = opt.search_radius_factor * opt.subsample_step_factor
    kmax = int(math.floor(span + 1e-9))
    k, l = np.meshgrid(np.arange(-kmax, kmax + 1), np.arange(-kmax, kmax + 1), indexing="ij")
    k = k.ravel()
    l = l.ravel()
    n2 = k * k + l * l
    inside = n2 <= span * span + 1e-6
    k, l, n2 = k[inside], l[inside], n2[inside]
    order = np.lexsort((l, k, n2))
    k, l, n2 = k[order], l[order], n2[order]
    band = np.floor(np.sqrt(n2) + 1e-12).astype(int)
    bands = []
    r0 = []
    for b in np.unique(band):
        idx = np.nonzero(band == b)[0]
        bands.append(slice(int(idx[0]), int(idx[-1]) + 1))
        r0.append(b * step)
    for a in (k, l):
        a.setflags(write=False)
    return CandidateSet(step, radius, k, l, tuple(bands), np.array(r0))


@dataclass
class _Paired:
    """Masked evaluated nodes paired with reference dose at the same positions."""

    reference: DoseGrid
    evaluated: DoseGrid
    jj: np.ndarray
    ii: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    d_eval: np.ndarray
    d_ref: np.ndarray
    norm: float

    def __len__(self):
        return len(self.jj)

    def subset(self, keep: np.ndarray) -> "_Paired":
        return _Paired(
            self.reference,
            self.evaluated,
            self.jj[keep],
            self.ii[keep],
            self.fx[keep],
            self.fy[keep],
            self.d_eval[keep],
            self.d_ref[keep],
            self.norm,
        )


def _pair(reference: DoseGrid, evaluated: DoseGrid, mask) -> _Paired:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != evaluated.values.shape:
        raise GeometryMismatch(
            f"mask shape {mask.shape} does not match evaluated grid {evaluated.values.shape}"
        )
    ge, gr = evaluated.geometry, reference.geometry
    jj, ii = np.nonzero(mask & evaluated.valid)
    off_x = snap((ge.origin_x - gr.origin_x) / gr.dx)
    off_y = snap((ge.origin_y - gr.origin_y) / gr.dy)
    fx = snap(off_x + ii * (ge.dx / gr.dx))
    fy = snap(off_y + jj * (ge.dy / gr.dy))
    d_ref, ok = bilinear_index(reference.values, reference.valid, fx, fy)
    if not ok.any():
        raise GeometryMismatch("reference grid does not overlap the masked nodes")
    jj, ii, fx, fy, d_ref = jj[ok], ii[ok], fx[ok], fy[ok], d_ref[ok]
    if len(jj) < MIN_MASK_NODES:
        raise EmptyMask(f"{len(jj)} comparable nodes in mask, need {MIN_MASK_NODES}")
    norm = float(d_ref.max())
    if norm <= 0:
        raise EmptyMask("reference dose is zero over the whole mask")
    d_eval = evaluated.values[jj, ii]
    return _Paired(reference, evaluated, jj, ii, fx, fy, d_eval, d_ref, norm)


def _above_cutoff(paired: _Paired, opt: GammaOptions) -> _Paired:
    keep = paired.d_ref >= opt.low_dose_cutoff_pct / 100.0 * paired.norm
    count = int(keep.sum())
    if count < MIN_MASK_NODES:
        raise EmptyMask(
            f"{count} nodes survive the {opt.low_dose_cutoff_pct:g}% low-dose cutoff, "
            f"need {MIN_MASK_NODES}"
        )
    return paired.subset(keep)


def _candidate_dose(paired: _Paired, rows: np.ndarray, cands: CandidateSet, sl: slice):
    ref = paired.reference
    kx = cands.k[sl] * cands.step / ref.dx
    ly = cands.l[sl] * cands.step / ref.dy
    fx = snap(paired.fx[rows, None] + kx[None, :])
    fy = snap(paired.fy[rows, None] + ly[None, :])
    return bilinear_index(ref.values, ref.valid, fx, fy)


def _gamma_values(paired: _Paired, c: GammaCriterion, opt: GammaOptions) -> np.ndarray:
    cands = candidate_set(c.dist_mm, opt)
    dose_tol = c.dose_pct / 100.0 * paired.norm
    dist2 = (cands.ox**2 + cands.oy**2) / c.dist_mm**2
    best = np.full(len(paired), np.inf)
    for start in range(0, len(paired), _BLOCK):
        active = np.arange(start, min(start + _BLOCK, len(paired)))
        for b, sl in enumerate(cands.bands):
            # nothing further out can beat the current minimum
            active = active[best[active] > (cands.band_r0[b] / c.dist_mm) ** 2]
            if active.size == 0:
                break
            d_ref, ok = _candidate_dose(paired, active, cands, sl)
            g2 = dist2[None, sl] + ((d_ref - paired.d_eval[active, None]) / dose_tol) ** 2
            g2 = np.where(ok, g2, np.inf)
            best[active] = np.minimum(best[active], g2.min(axis=1))
    return np.sqrt(best)


@dataclass(frozen=True, eq=False)
class GammaMap:
    """Per-node gamma on the evaluated grid; NaN marks excluded nodes."""

    gamma: np.ndarray
    criterion: GammaCriterion

    @property
    def included(self) -> np.ndarray:
        return ~np.isnan(self.gamma)

    def included_values(self) -> np.ndarray:
        return self.gamma[self.included]


def gamma_map(
    reference: DoseGrid,
    evaluated: DoseGrid,
    mask,
    c: GammaCriterion,
    opt: GammaOptions = GammaOptions(),
) -> GammaMap:
    paired = _above_cutoff(_pair(reference, evaluated, mask), opt)
    return _to_map(paired, _gamma_values(paired, c, opt), c)


def _to_map(paired: _Paired, gamma: np.ndarray, c: GammaCriterion) -> GammaMap:
    out = np.full(paired.evaluated.values.shape, np.nan)
    out[paired.jj, paired.ii] = gamma
    return GammaMap(out, c)


def gamma_stats(gmap) -> Dict[str, float]:
    """Passing rate (gamma <= 1, in %) and median gamma over included nodes.

    Accepts a ``GammaMap`` or a plain array of gamma values (NaN = excluded).
    """
    g = gmap.gamma if isinstance(gmap, GammaMap) else np.asarray(gmap, dtype=float)
    g = g[~np.isnan(g)]
    if g.size == 0:
        raise EmptyMap("gamma map has no included nodes")
    gpr = 100.0 * np.count_nonzero(g <= 1.0 + GAMMA_PASS_TOL) / g.size
    return {"gpr_pct": float(gpr), "median_gamma": float(np.median(g))}


def _dose_diff(paired: _Paired) -> Dict[str, float]:
    diff = (paired.d_eval - paired.d_ref) / paired.norm * 100.0
    return {"mean_pct": float(np.mean(diff)), "median_pct": float(np.median(diff))}


def dose_difference_stats(reference: DoseGrid, evaluated: DoseGrid, mask) -> Dict[str, float]:
    """Mean and median signed dose difference (evaluated - reference) in % of normalization."""
    return _dose_diff(_pair(reference, evaluated, mask))


@lru_cache(maxsize=32)
def _neighbour_pairs(dist_mm: float, opt: GammaOptions):
    """Grid-adjacent candidate pairs, grouped by the later band of the two."""
    cands = candidate_set(dist_mm, opt)
    pos = {(int(a), int(b)): n for n, (a, b) in enumerate(zip(cands.k, cands.l))}
    band_of = np.empty(len(cands), dtype=int)
    for b, sl in enumerate(cands.bands):
        band_of[sl] = b
    grouped: List[List[Tuple[int, int]]] = [[] for _ in cands.bands]
    for (a, b), n in pos.items():
        for m in (pos.get((a + 1, b)), pos.get((a, b + 1))):
            if m is not None:
                grouped[max(band_of[n], band_of[m])].append((n, m))
    out = []
    for pairs in grouped:
        pairs.sort()
        arr = np.array(pairs, dtype=int).reshape(-1, 2)
        out.append((arr[:, 0], arr[:, 1]))
    return tuple(out)


def _dta_values(paired: _Paired, dist_mm: float, opt: GammaOptions) -> np.ndarray:
    """Distance to the nearest reference position matching the evaluated dose.

    A candidate matches when its dose is within ``DTA_DOSE_TOL * norm``;
    between two adjacent candidates whose dose difference changes sign, the
    crossing is located by linear interpolation. No match within the search
    radius gives the radius.
    """
    cands = candidate_set(dist_mm, opt)
    pairs = _neighbour_pairs(dist_mm, opt)
    tol = DTA_DOSE_TOL * paired.norm
    ox, oy = cands.ox, cands.oy
    r = cands.r
    best = np.full(len(paired), np.inf)
    for start in range(0, len(paired), _BLOCK):
        rows = np.arange(start, min(start + _BLOCK, len(paired)))
        diff = np.full((len(rows), len(cands)), np.nan)
        local = np.arange(len(rows))
        for b, sl in enumerate(cands.bands):
            local = local[best[rows[local]] + cands.step >= cands.band_r0[b]]
            if local.size == 0:
                break
            act = rows[local]
            d_ref, ok = _candidate_dose(paired, act, cands, sl)
            f = np.where(ok, d_ref - paired.d_eval[act, None], np.nan)
            diff[local, sl] = f
            hit = np.abs(f) <= tol
            cand_best = np.where(hit, r[None, sl], np.inf).min(axis=1)
            pa, pb = pairs[b]
            if pa.size:
                fa = diff[np.ix_(local, pa)]
                fb = diff[np.ix_(local, pb)]
                with np.errstate(invalid="ignore", divide="ignore"):
                    cross = fa * fb < 0
                    t = fa / (fa - fb)
                    px = ox[pa] + t * (ox[pb] - ox[pa])
                    py = oy[pa] + t * (oy[pb] - oy[pa])
                seg = np.where(cross, np.hypot(px, py), np.inf).min(axis=1)
                cand_best = np.minimum(cand_best, seg)
            best[act] = np.minimum(best[act], cand_best)
    return np.minimum(best, cands.radius)


def dta_stat(
    reference: DoseGrid,
    evaluated: DoseGrid,
    mask,
    opt: GammaOptions = GammaOptions(),
    criterion: GammaCriterion = GIC1,
) -> float:
    """Median per-node distance to agreement, searched with ``criterion.dist_mm``'s window."""
    paired = _above_cutoff(_pair(reference, evaluated, mask), opt)
    return float(np.median(_dta_values(paired, criterion.dist_mm, opt)))


def dta_map(reference, evaluated, mask, opt=GammaOptions(), criterion=GIC1) -> np.ndarray:
    paired = _above_cutoff(_pair(reference, evaluated, mask), opt)
    out = np.full(evaluated.values.shape, np.nan)
    out[paired.jj, paired.ii] = _dta_values(paired, criterion.dist_mm, opt)
    return out


def _com(paired: _Paired) -> float:
    g = paired.evaluated.geometry
    centres = []
    for w in (paired.d_ref, paired.d_eval):
        total = w.sum()
        if not total > 0:
            raise ZeroMass("no dose inside the mask")
        # index units of the evaluated grid keep the result origin-independent
        centres.append(((w * paired.ii).sum() / total, (w * paired.jj).sum() / total))
    (ri, rj), (ei, ej) = centres
    return float(math.hypot(g.dx * (ei - ri), g.dy * (ej - rj)))


def com_distance(reference: DoseGrid, evaluated: DoseGrid, mask) -> float:
    """Distance in mm between the dose-weighted centroids over the masked nodes."""
    return _com(_pair(reference, evaluated, mask))


@dataclass(frozen=True)
class AuditResult:
    gpr_gic1: float
    gpr_gic2: float
    gpr_gic3: float
    gpr_gic4: float
    median_gamma_gic1: float
    median_gamma_gic2: float
    median_gamma_gic3: float
    median_gamma_gic4: float
    mean_dose_diff_pct: float
    median_dose_diff_pct: float
    dta_mm: float
    com_distance_mm: float

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRICS}

    def values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in METRICS)


METRICS = tuple(f.name for f in fields(AuditResult))


def audit_outputs(
    reference: DoseGrid,
    evaluated: DoseGrid,
    mask,
    opt: GammaOptions = GammaOptions(),
    criteria=GICS,
    maps: bool = False,
):
    """The twelve audit outputs for one configuration.

    DTA uses the first criterion's distance for its search window. With
    ``maps=True`` returns ``(result, [GammaMap, ...])``.
    """
    if len(criteria) != 4:
        raise FormatError("exactly four gamma criteria are required")
    paired = _pair(reference, evaluated, mask)
    above = _above_cutoff(paired, opt)
    gpr, mg, gmaps = [], [], []
    for c in criteria:
        gm = _to_map(above, _gamma_values(above, c, opt), c)
        s = gamma_stats(gm)
        gpr.append(s["gpr_pct"])
        mg.append(s["median_gamma"])
        gmaps.append(gm)
    dd = _dose_diff(paired)
    dta = float(np.median(_dta_values(above, criteria[0].dist_mm, opt)))
    result = AuditResult(*gpr, *mg, dd["mean_pct"], dd["median_pct"], dta, _com(paired))
    return (result, gmaps) if maps else result
