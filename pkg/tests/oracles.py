"""Brute-force reference computations for the audit metrics.

These share only the candidate displacement list with the package; dose
interpolation goes through scipy and every search is exhaustive.
"""

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from gamma_audit.gamma import GammaOptions, candidate_set

_EDGE = 1e-9


class Interp:
    def __init__(self, grid):
        g = grid.geometry
        self.xs = g.origin_x + np.arange(g.nx) * g.dx
        self.ys = g.origin_y + np.arange(g.ny) * g.dy
        self.f = RegularGridInterpolator((self.ys, self.xs), grid.values, method="linear")

    def __call__(self, x, y):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.full(x.shape, np.nan)
        inside = (
            (x >= self.xs[0] - _EDGE) & (x <= self.xs[-1] + _EDGE)
            & (y >= self.ys[0] - _EDGE) & (y <= self.ys[-1] + _EDGE)
        )
        xc = np.clip(x[inside], self.xs[0], self.xs[-1])
        yc = np.clip(y[inside], self.ys[0], self.ys[-1])
        out[inside] = self.f(np.column_stack([yc, xc]))
        return out


def paired_nodes(reference, evaluated, mask):
    """(x, y, d_eval, d_ref) for masked nodes where the reference is defined."""
    g = evaluated.geometry
    ref = Interp(reference)
    xs, ys, de, dr = [], [], [], []
    for j in range(g.ny):
        for i in range(g.nx):
            if not (mask[j, i] and evaluated.valid[j, i]):
                continue
            x = g.origin_x + i * g.dx
            y = g.origin_y + j * g.dy
            d = ref(x, y)[0]
            if math.isnan(d):
                continue
            xs.append(x)
            ys.append(y)
            de.append(evaluated.values[j, i])
            dr.append(d)
    return np.array(xs), np.array(ys), np.array(de), np.array(dr)


def gamma_oracle(reference, evaluated, mask, crit, opt=GammaOptions()):
    """Full gamma map (NaN excluded) by exhaustive search over every candidate."""
    g = evaluated.geometry
    ref = Interp(reference)
    cands = candidate_set(crit.dist_mm, opt)
    ox, oy = cands.ox, cands.oy
    _, _, _, dr_all = paired_nodes(reference, evaluated, mask)
    norm = dr_all.max()
    out = np.full(g.shape, np.nan)
    for j in range(g.ny):
        for i in range(g.nx):
            if not (mask[j, i] and evaluated.valid[j, i]):
                continue
            x = g.origin_x + i * g.dx
            y = g.origin_y + j * g.dy
            d0 = ref(x, y)[0]
            if math.isnan(d0) or d0 < opt.low_dose_cutoff_pct / 100 * norm:
                continue
            de = evaluated.values[j, i]
            dr = ref(x + ox, y + oy)
            g2 = (ox**2 + oy**2) / crit.dist_mm**2 + ((dr - de) / (crit.dose_pct / 100 * norm)) ** 2
            out[j, i] = math.sqrt(np.nanmin(g2))
    return out


def dta_oracle(reference, evaluated, mask, dist_mm, opt=GammaOptions()):
    """Per-node DTA: exact matches and sign changes between neighbouring candidates."""
    g = evaluated.geometry
    ref = Interp(reference)
    step = dist_mm / opt.subsample_step_factor
    radius = opt.search_radius_factor * dist_mm
    kmax = int(round(opt.search_radius_factor * opt.subsample_step_factor))
    ks = np.arange(-kmax, kmax + 1)
    K, L = np.meshgrid(ks, ks, indexing="ij")
    disc = K**2 + L**2 <= kmax**2
    OX, OY = K * step, L * step
    _, _, _, dr_all = paired_nodes(reference, evaluated, mask)
    norm = dr_all.max()
    tol = 1e-6 * norm
    out = []
    for j in range(g.ny):
        for i in range(g.nx):
            if not (mask[j, i] and evaluated.valid[j, i]):
                continue
            x = g.origin_x + i * g.dx
            y = g.origin_y + j * g.dy
            d0 = ref(x, y)[0]
            if math.isnan(d0) or d0 < opt.low_dose_cutoff_pct / 100 * norm:
                continue
            de = evaluated.values[j, i]
            f = ref((x + OX).ravel(), (y + OY).ravel()).reshape(OX.shape) - de
            f[~disc] = np.nan
            best = math.inf
            n = len(ks)
            for a in range(n):
                for b in range(n):
                    fa = f[a, b]
                    if math.isnan(fa):
                        continue
                    if abs(fa) <= tol:
                        best = min(best, math.hypot(OX[a, b], OY[a, b]))
                    for a2, b2 in ((a + 1, b), (a, b + 1)):
                        if a2 >= n or b2 >= n or math.isnan(f[a2, b2]):
                            continue
                        fb = f[a2, b2]
                        if fa * fb < 0:
                            t = fa / (fa - fb)
                            px = OX[a, b] + t * (OX[a2, b2] - OX[a, b])
                            py = OY[a, b] + t * (OY[a2, b2] - OY[a, b])
                            best = min(best, math.hypot(px, py))
            out.append(min(best, radius))
    return np.array(out)


def median(values):
    v = sorted(values)
    n = len(v)
    return v[n // 2] if n % 2 else (v[n // 2 - 1] + v[n // 2]) / 2


def dose_diff_oracle(reference, evaluated, mask):
    _, _, de, dr = paired_nodes(reference, evaluated, mask)
    norm = dr.max()
    diffs = [(a - b) / norm * 100 for a, b in zip(de, dr)]
    return sum(diffs) / len(diffs), median(diffs)


def com_oracle(reference, evaluated, mask):
    x, y, de, dr = paired_nodes(reference, evaluated, mask)
    cr = (np.dot(dr, x) / dr.sum(), np.dot(dr, y) / dr.sum())
    ce = (np.dot(de, x) / de.sum(), np.dot(de, y) / de.sum())
    return math.hypot(ce[0] - cr[0], ce[1] - cr[1])


def gpr_median(gamma):
    g = gamma[~np.isnan(gamma)]
    passed = sum(1 for v in g if v <= 1.0 + 1e-9)
    return 100.0 * passed / len(g), median(list(g))


def audit_oracle(reference, evaluated, mask, criteria, opt=GammaOptions()):
    """All twelve outputs, in AuditResult order."""
    gprs, mgs = [], []
    for c in criteria:
        gpr, mg = gpr_median(gamma_oracle(reference, evaluated, mask, c, opt))
        gprs.append(gpr)
        mgs.append(mg)
    mean_dd, med_dd = dose_diff_oracle(reference, evaluated, mask)
    dta = median(list(dta_oracle(reference, evaluated, mask, criteria[0].dist_mm, opt)))
    return (*gprs, *mgs, mean_dd, med_dd, dta, com_oracle(reference, evaluated, mask))
