"""Uniform 2D dose grids, ROI masks and the perturbations used as audit factors.

Grids are node-centred. ``values[j, i]`` is the dose at
``(origin_x + i * dx, origin_y + j * dy)``, i.e. arrays are indexed
``[y, x]`` and flatten row-major with y as the slow axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .errors import FormatError, OutOfBounds, RoiTooSmall

MIN_MASK_NODES = 16

# Fractional indices this close to an integer are treated as exact nodes.
_SNAP_TOL = 1e-9
# Relative slack on ROI boundaries; ties go to inclusion.
_ROI_TOL = 1e-9


@dataclass(frozen=True)
class GridGeometry:
    nx: int
    ny: int
    dx: float
    dy: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 2 or self.ny < 2:
            raise FormatError(f"grid needs nx, ny >= 2 (got {self.nx}x{self.ny})")
        for name in ("dx", "dy"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise FormatError(f"{name} must be > 0 (got {v})")
        for name in ("origin_x", "origin_y"):
            if not math.isfinite(getattr(self, name)):
                raise FormatError(f"{name} must be finite")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extent(self) -> Tuple[float, float]:
        return ((self.nx - 1) * self.dx, (self.ny - 1) * self.dy)

    def node_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """Physical x and y coordinates of every node, each shaped ``(ny, nx)``."""
        xs = self.origin_x + np.arange(self.nx) * self.dx
        ys = self.origin_y + np.arange(self.ny) * self.dy
        return np.meshgrid(xs, ys)


@dataclass(frozen=True, eq=False)
class DoseGrid:
    """Dose in Gy on a uniform grid.

    ``valid`` marks nodes that carry data; nodes invalidated by a
    translation hold 0.0 and are excluded from every mask downstream.
    """

    geometry: GridGeometry
    values: np.ndarray
    valid: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.geometry.shape:
            raise FormatError(
                f"values shape {values.shape} does not match grid (ny, nx) = {self.geometry.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise FormatError("dose values must be finite")
        if np.any(values < 0):
            raise FormatError("dose values must be >= 0")
        if self.valid is None:
            valid = np.ones(values.shape, dtype=bool)
        else:
            valid = np.array(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise FormatError("valid mask shape does not match values")
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, values, dx=1.0, dy=1.0, origin=(0.0, 0.0), valid=None) -> "DoseGrid":
        values = np.asarray(values, dtype=float)
        ny, nx = values.shape
        geom = GridGeometry(nx, ny, float(dx), float(dy), float(origin[0]), float(origin[1]))
        return cls(geom, values, valid)

    @property
    def nx(self) -> int:
        return self.geometry.nx

    @property
    def ny(self) -> int:
        return self.geometry.ny

    @property
    def dx(self) -> float:
        return self.geometry.dx

    @property
    def dy(self) -> float:
        return self.geometry.dy

    def with_values(self, values, valid=None) -> "DoseGrid":
        return DoseGrid(self.geometry, values, self.valid if valid is None else valid)

    def scaled(self, factor: float) -> "DoseGrid":
        return DoseGrid(self.geometry, self.values * factor, self.valid)

    def translated(self, tx_mm: float, ty_mm: float) -> "DoseGrid":
        """Move the whole grid in space (origin change); values are untouched."""
        g = self.geometry
        geom = GridGeometry(g.nx, g.ny, g.dx, g.dy, g.origin_x + tx_mm, g.origin_y + ty_mm)
        return DoseGrid(geom, self.values, self.valid)


@dataclass(frozen=True)
class RoiSpec:
    shape: str
    half_width_mm: float
    half_height_mm: float
    center_x_mm: float = 0.0
    center_y_mm: float = 0.0

    def __post_init__(self):
        if self.shape not in ("rectangle", "ellipse"):
            raise FormatError(f"ROI shape must be 'rectangle' or 'ellipse' (got {self.shape!r})")
        if not (self.half_width_mm > 0 and self.half_height_mm > 0):
            raise FormatError("ROI half extents must be > 0")

    def resized(self, scale: float) -> "RoiSpec":
        return RoiSpec(
            self.shape,
            self.half_width_mm * scale,
            self.half_height_mm * scale,
            self.center_x_mm,
            self.center_y_mm,
        )


@dataclass(frozen=True)
class Perturbation:
    dose_offset_pct: float = 0.0
    shift_x_mm: float = 0.0
    shift_y_mm: float = 0.0

    def __post_init__(self):
        if not self.dose_offset_pct > -100:
            raise FormatError("dose_offset_pct must be > -100")

    @property
    def scale(self) -> float:
        return 1.0 + self.dose_offset_pct / 100.0

    def is_identity(self) -> bool:
        return self.dose_offset_pct == 0 and self.shift_x_mm == 0 and self.shift_y_mm == 0


def snap(fi):
    """Round fractional indices to the nearest integer when within ``_SNAP_TOL``."""
    fi = np.asarray(fi, dtype=float)
    r = np.rint(fi)
    return np.where(np.abs(fi - r) <= _SNAP_TOL, r, fi)


def bilinear_index(values: np.ndarray, valid: np.ndarray, fx, fy):
    """Bilinear sample at fractional node indices.

    Returns ``(dose, ok)``. ``ok`` is False outside the grid or when a
    corner carrying non-zero weight is an invalid node. Node positions
    reproduce stored values exactly.
    """
    ny, nx = values.shape
    fx = np.asarray(fx, dtype=float)
    fy = np.asarray(fy, dtype=float)
    inside = (fx >= 0) & (fx <= nx - 1) & (fy >= 0) & (fy <= ny - 1)
    fxc = np.clip(fx, 0, nx - 1)
    fyc = np.clip(fy, 0, ny - 1)
    i0 = np.minimum(np.floor(fxc).astype(np.intp), nx - 2)
    j0 = np.minimum(np.floor(fyc).astype(np.intp), ny - 2)
    tx = fxc - i0
    ty = fyc - j0
    v00 = values[j0, i0]
    v10 = values[j0, i0 + 1]
    v01 = values[j0 + 1, i0]
    v11 = values[j0 + 1, i0 + 1]
    dose = (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11)
    ok = (
        inside
        & (valid[j0, i0] | (tx == 1) | (ty == 1))
        & (valid[j0, i0 + 1] | (tx == 0) | (ty == 1))
        & (valid[j0 + 1, i0] | (tx == 1) | (ty == 0))
        & (valid[j0 + 1, i0 + 1] | (tx == 0) | (ty == 0))
    )
    return dose, ok


def sample_bilinear(grid: DoseGrid, x_mm: float, y_mm: float) -> float:
    """Dose at a physical position by bilinear interpolation of the four surrounding nodes."""
    g = grid.geometry
    fx = snap((x_mm - g.origin_x) / g.dx)
    fy = snap((y_mm - g.origin_y) / g.dy)
    if not (0 <= fx <= g.nx - 1 and 0 <= fy <= g.ny - 1):
        raise OutOfBounds(f"({x_mm}, {y_mm}) mm lies outside the grid extent")
    dose, ok = bilinear_index(grid.values, grid.valid, fx, fy)
    if not ok:
        raise OutOfBounds(f"({x_mm}, {y_mm}) mm touches an invalid node")
    return float(dose)


def roi_membership(geometry: GridGeometry, roi: RoiSpec) -> np.ndarray:
    """Nodes inside the ROI (boundary inclusive), ignoring node validity."""
    x, y = geometry.node_coords()
    u = (x - roi.center_x_mm) / roi.half_width_mm
    v = (y - roi.center_y_mm) / roi.half_height_mm
    if roi.shape == "rectangle":
        return (np.abs(u) <= 1 + _ROI_TOL) & (np.abs(v) <= 1 + _ROI_TOL)
    return u * u + v * v <= 1 + _ROI_TOL


def realize_roi(grid: DoseGrid, roi: RoiSpec) -> np.ndarray:
    mask = roi_membership(grid.geometry, roi) & grid.valid
    count = int(mask.sum())
    if count < MIN_MASK_NODES:
        raise RoiTooSmall(f"ROI covers {count} valid nodes, need at least {MIN_MASK_NODES}")
    return mask


def apply_perturbation(grid: DoseGrid, p: Perturbation) -> DoseGrid:
    """Scale and rigidly translate a dose grid onto its own geometry.

    Each node takes ``scale * dose(node - shift)``. Nodes whose pre-image
    leaves the grid are set to 0 and marked invalid rather than extrapolated.
    """
    if p.is_identity():
        return grid
    g = grid.geometry
    jj, ii = np.indices(g.shape)
    fx = snap(ii - p.shift_x_mm / g.dx)
    fy = snap(jj - p.shift_y_mm / g.dy)
    dose, ok = bilinear_index(grid.values, grid.valid, fx, fy)
    out = np.where(ok, p.scale * dose, 0.0)
    return DoseGrid(g, out, ok)


@dataclass(frozen=True)
class PhantomSpec:
    peak_dose: float
    sigma_mm: float
    center: Tuple[float, float] = (0.0, 0.0)
    background: float = 0.0

    def __post_init__(self):
        if not self.sigma_mm > 0:
            raise FormatError("sigma_mm must be > 0")
        if not (self.background >= 0 and self.peak_dose > self.background):
            raise FormatError("need peak_dose > background >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    seed: Union[int, Tuple[int, ...]] = 0
    amplitude_pct: float = 0.0


def synth_phantom(spec: PhantomSpec, noise: NoiseSpec, geometry: GridGeometry) -> DoseGrid:
    """Isotropic Gaussian dose blob on a background with seeded multiplicative noise.

    Noise multiplies each node by ``1 + amplitude_pct/100 * N(0, 1)``;
    negative results are clipped to zero.
    """
    x, y = geometry.node_coords()
    r2 = (x - spec.center[0]) ** 2 + (y - spec.center[1]) ** 2
    dose = spec.peak_dose * np.exp(-r2 / (2.0 * spec.sigma_mm**2)) + spec.background
    if noise.amplitude_pct:
        rng = np.random.default_rng(noise.seed)
        dose = dose * (1.0 + noise.amplitude_pct / 100.0 * rng.standard_normal(dose.shape))
        dose = np.clip(dose, 0.0, None)
    return DoseGrid(geometry, dose)
