"""Balanced full-factorial sweeps over the audit factors F01-F09.

Factor semantics (the "calibrated" side is the measured/evaluated dose,
the "reference" side the planned dose):

====  ==========================  ========================================
F01   calibrated ROI shape         "rectangle" / "ellipse"
F02   reference ROI shape          "rectangle" / "ellipse"
F03   calibrated dose offset       percent, multiplicative
F04   calibrated offset x          mm
F05   calibrated offset y          mm
F06   reference offset x           mm
F07   reference offset y           mm
F08   reference ROI size           scale on the baseline half extents
F09   calibrated ROI size          scale on the baseline half extents
====  ==========================  ========================================
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dgrid import FACTOR_IDS, AuditConfig, read_dgrid
from .errors import ComputationError, EmptyFactor, FormatError, RoiTooSmall
from .gamma import METRICS, AuditResult, GammaOptions, audit_outputs
from .grid import (
    MIN_MASK_NODES,
    DoseGrid,
    GridGeometry,
    NoiseSpec,
    Perturbation,
    PhantomSpec,
    RoiSpec,
    realize_roi,
    roi_membership,
    synth_phantom,
    apply_perturbation,
)

log = logging.getLogger(__name__)

FACTOR_NAMES = {
    "F01": "calibrated shape",
    "F02": "reference shape",
    "F03": "calibrated offset dosage",
    "F04": "calibrated offset x",
    "F05": "calibrated offset y",
    "F06": "reference offset x",
    "F07": "reference offset y",
    "F08": "reference size",
    "F09": "calibrated size",
}
POOLED_INTERACTIONS = "F10"

DEFAULT_LEVELS = {
    "F01": ["rectangle", "ellipse"],
    "F02": ["rectangle", "ellipse"],
    "F03": [0.0, 2.0],
    "F04": [0.0, 1.0],
    "F05": [0.0, 1.0],
    "F06": [0.0, 1.0],
    "F07": [0.0, 1.0],
    "F08": [1.0, 0.8],
    "F09": [1.0, 0.8],
}
_SHAPE_FACTORS = ("F01", "F02")


@dataclass(frozen=True)
class Factor:
    id: str
    levels: Tuple[Any, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 2:
            raise EmptyFactor(f"factor {self.id} needs at least 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise FormatError(f"factor {self.id} has repeated levels")
        if self.id in FACTOR_NAMES:
            if self.id in _SHAPE_FACTORS:
                bad = [v for v in self.levels if v not in ("rectangle", "ellipse")]
            else:
                bad = [v for v in self.levels if isinstance(v, (str, bool)) or not math.isfinite(v)]
            if bad:
                raise FormatError(f"factor {self.id} has invalid levels {bad}")

    @property
    def name(self) -> str:
        return FACTOR_NAMES.get(self.id, self.id)


def default_factors() -> List[Factor]:
    return [Factor(fid, DEFAULT_LEVELS[fid]) for fid in FACTOR_IDS]


@dataclass(frozen=True)
class FactorialDesign:
    factors: Tuple[Factor, ...]
    points: Tuple[Tuple[int, ...], ...]

    def __len__(self):
        return len(self.points)

    def values(self, point) -> Dict[str, Any]:
        return {f.id: f.levels[k] for f, k in zip(self.factors, point)}


def full_factorial(factors: Sequence[Factor]) -> FactorialDesign:
    """All level combinations, lexicographic with the last factor varying fastest."""
    if not factors:
        raise EmptyFactor("a design needs at least one factor")
    for f in factors:
        if len(f.levels) < 2:
            raise EmptyFactor(f"factor {f.id} needs at least 2 levels")
    points = tuple(itertools.product(*(range(len(f.levels)) for f in factors)))
    return FactorialDesign(tuple(factors), points)


@dataclass(frozen=True, eq=False)
class CentreDataset:
    centre_id: str
    reference: DoseGrid
    evaluated: DoseGrid
    roi: RoiSpec


def apply_design_point(centre: CentreDataset, point, factors: Sequence[Factor]):
    """Realize one design point: returns ``(reference, evaluated, mask)``.

    Actions run in a fixed order: ROIs, then the calibrated dose offset,
    then translations. The metric mask is the intersection of the
    calibrated-side and reference-side ROIs on the evaluated grid.
    Factors absent from ``factors`` stay at the identity.
    """
    lv = {f.id: f.levels[k] for f, k in zip(factors, point)}
    base = centre.roi
    roi_cal = RoiSpec(
        lv.get("F01", base.shape), base.half_width_mm, base.half_height_mm,
        base.center_x_mm, base.center_y_mm,
    ).resized(lv.get("F09", 1.0))
    roi_ref = RoiSpec(
        lv.get("F02", base.shape), base.half_width_mm, base.half_height_mm,
        base.center_x_mm, base.center_y_mm,
    ).resized(lv.get("F08", 1.0))

    evaluated = apply_perturbation(centre.evaluated, Perturbation(float(lv.get("F03", 0.0))))
    evaluated = apply_perturbation(
        evaluated, Perturbation(0.0, float(lv.get("F04", 0.0)), float(lv.get("F05", 0.0)))
    )
    reference = apply_perturbation(
        centre.reference, Perturbation(0.0, float(lv.get("F06", 0.0)), float(lv.get("F07", 0.0)))
    )

    mask = realize_roi(evaluated, roi_cal) & roi_membership(evaluated.geometry, roi_ref)
    if mask.sum() < MIN_MASK_NODES:
        raise RoiTooSmall(
            f"ROI intersection covers {int(mask.sum())} nodes, need {MIN_MASK_NODES}"
        )
    return reference, evaluated, mask


@dataclass(frozen=True)
class ResultRow:
    centre_id: str
    point: Tuple[int, ...]
    result: Optional[AuditResult]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.result is not None


@dataclass(frozen=True)
class ResultTable:
    factors: Tuple[Factor, ...]
    rows: Tuple[ResultRow, ...]

    def centres(self) -> List[str]:
        return list(dict.fromkeys(r.centre_id for r in self.rows))

    def ok_rows(self) -> List[ResultRow]:
        return [r for r in self.rows if r.ok]

    def rows_for(self, centre_id: str) -> List[ResultRow]:
        return [r for r in self.rows if r.centre_id == centre_id]

    def metric_matrix(self, rows: Sequence[ResultRow]) -> np.ndarray:
        """``(len(rows), 12)`` responses in the fixed metric order."""
        return np.array([r.result.values() for r in rows], dtype=float).reshape(-1, len(METRICS))


_WORKER: Dict[str, Any] = {}


def _init_worker(centres, factors, opt):
    _WORKER.update(centres=centres, factors=factors, opt=opt)


def _evaluate(centre: CentreDataset, point, factors, opt) -> ResultRow:
    try:
        ref, ev, mask = apply_design_point(centre, point, factors)
        return ResultRow(centre.centre_id, tuple(point), audit_outputs(ref, ev, mask, opt))
    except ComputationError as exc:
        return ResultRow(centre.centre_id, tuple(point), None, f"{type(exc).__name__}: {exc}")


def _evaluate_task(task) -> ResultRow:
    ci, point = task
    return _evaluate(_WORKER["centres"][ci], point, _WORKER["factors"], _WORKER["opt"])


def run_design(
    centres: Sequence[CentreDataset],
    design: FactorialDesign,
    opt: GammaOptions = GammaOptions(),
    jobs: int = 1,
) -> ResultTable:
    """Evaluate every (centre, design point); rows are centre-major in design order.

    Failed points become rows carrying an error message. Output is the same
    for any ``jobs``.
    """
    tasks = [(ci, p) for ci in range(len(centres)) for p in design.points]
    if jobs <= 1:
        rows = [_evaluate(centres[ci], p, design.factors, opt) for ci, p in tasks]
    else:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(tuple(centres), design.factors, opt),
        ) as ex:
            rows = list(ex.map(_evaluate_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    failed = sum(not r.ok for r in rows)
    if failed:
        log.warning("%d of %d design rows failed", failed, len(rows))
    return ResultTable(tuple(design.factors), tuple(rows))


def _phantom(doc: Dict[str, Any]) -> PhantomSpec:
    center = doc.get("center_mm", [0.0, 0.0])
    return PhantomSpec(
        float(doc["peak_dose"]),
        float(doc["sigma_mm"]),
        (float(center[0]), float(center[1])),
        float(doc.get("background", 0.0)),
    )


def synthetic_centre(
    centre_id: str,
    spec: Dict[str, Any],
    geometry: GridGeometry,
    roi: RoiSpec,
    seed: Sequence[int],
) -> CentreDataset:
    """Planned (``tps``) and measured (``film``) Gaussian phantoms for one centre.

    Each side is ``{peak_dose, sigma_mm, center_mm, background, noise_pct}``;
    the two noise streams are seeded from ``(*seed, 0)`` and ``(*seed, 1)``.
    """
    try:
        tps, film = spec["tps"], spec["film"]
        reference = synth_phantom(
            _phantom(tps), NoiseSpec((*seed, 0), float(tps.get("noise_pct", 0.0))), geometry
        )
        evaluated = synth_phantom(
            _phantom(film), NoiseSpec((*seed, 1), float(film.get("noise_pct", 0.0))), geometry
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"centre {centre_id}: bad synthetic spec ({exc})") from exc
    return CentreDataset(centre_id, reference, evaluated, roi)


def build_centres(config: AuditConfig, seed: Optional[int] = None) -> List[CentreDataset]:
    """Load or synthesize every centre in a config; ``seed`` overrides the config seed."""
    base_seed = config.seed if seed is None else seed
    out = []
    for index, c in enumerate(config.centres):
        if c.synthetic is not None:
            cseed = (base_seed, index if c.seed is None else c.seed)
            out.append(synthetic_centre(c.id, c.synthetic, config.grid, c.roi, cseed))
        else:
            out.append(CentreDataset(c.id, read_dgrid(c.reference_path), read_dgrid(c.evaluated_path), c.roi))
    return out


def config_factors(config: AuditConfig) -> List[Factor]:
    if config.factor_levels is None:
        return default_factors()
    return [Factor(fid, config.factor_levels[fid]) for fid in FACTOR_IDS]
