"""File formats: DGRID v1 dose grids and AUDIT v1 design configs.

DGRID v1 is a JSON document::

    {"format": "dgrid", "version": 1, "nx": 3, "ny": 2,
     "dx_mm": 1.0, "dy_mm": 1.0, "origin_mm": [0.0, 0.0],
     "unit": "Gy", "values": [...]}   # nx*ny floats, y-major

A CSV matrix (one line per y index, first line is y index 0) is also
accepted when a sidecar ``<stem>.json`` carries the same header fields
without ``values``. Gamma maps use unit ``"gamma"`` with ``null`` marking
excluded nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, UnknownVersion
from .gamma import GammaOptions
from .grid import DoseGrid, GridGeometry, RoiSpec

DGRID_UNITS = ("Gy", "gamma")


def _line_of(text: str, key: str) -> int:
    pos = text.find(f'"{key}"')
    return text.count("\n", 0, pos) + 1 if pos >= 0 else 1


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _load_json(path: Path) -> Tuple[Any, str]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc


def check_dgrid_header(doc: Dict[str, Any], text: str = "", with_values: bool = True) -> List[str]:
    """Return line-anchored violations of the DGRID v1 schema (empty when valid)."""
    problems = []

    def bad(key, msg):
        problems.append(f"line {_line_of(text, key)}: {key}: {msg}")

    if not isinstance(doc, dict):
        return ["line 1: document must be a JSON object"]
    if doc.get("format") != "dgrid":
        bad("format", f"expected 'dgrid', got {doc.get('format')!r}")
    if doc.get("version") != 1:
        bad("version", f"unsupported version {doc.get('version')!r} (this reader handles 1)")
    for key in ("nx", "ny"):
        v = doc.get(key)
        if not (isinstance(v, int) and not isinstance(v, bool) and v >= 2):
            bad(key, f"must be an integer >= 2, got {v!r}")
    for key in ("dx_mm", "dy_mm"):
        v = doc.get(key)
        if not (_is_number(v) and math.isfinite(v) and v > 0):
            bad(key, f"must be a number > 0, got {v!r}")
    origin = doc.get("origin_mm")
    if not (
        isinstance(origin, list)
        and len(origin) == 2
        and all(_is_number(o) and math.isfinite(o) for o in origin)
    ):
        bad("origin_mm", f"must be [x, y] numbers, got {origin!r}")
    unit = doc.get("unit")
    if unit not in DGRID_UNITS:
        bad("unit", f"must be one of {DGRID_UNITS}, got {unit!r}")
    if with_values:
        values = doc.get("values")
        if not isinstance(values, list):
            bad("values", "missing or not an array")
        else:
            nullable = unit == "gamma"
            if not all(_is_number(v) or (nullable and v is None) for v in values):
                bad("values", "entries must be numbers" + (" or null" if nullable else ""))
            else:
                arr = np.array([np.nan if v is None else v for v in values], dtype=float)
                problems.extend(_check_values(arr, doc, text, unit))
    return problems


def _check_values(values: np.ndarray, doc, text, unit) -> List[str]:
    problems = []
    nx, ny = doc.get("nx"), doc.get("ny")
    line = _line_of(text, "values")
    if isinstance(nx, int) and isinstance(ny, int) and values.size != nx * ny:
        problems.append(
            f"line {line}: values: length {values.size} != nx*ny = {nx * ny}"
        )
    if unit == "Gy":
        if not np.all(np.isfinite(values)):
            problems.append(f"line {line}: values: dose must be finite")
        elif np.any(values < 0):
            problems.append(f"line {line}: values: dose must be >= 0")
    return problems


def _geometry(doc) -> GridGeometry:
    return GridGeometry(
        doc["nx"], doc["ny"], float(doc["dx_mm"]), float(doc["dy_mm"]),
        float(doc["origin_mm"][0]), float(doc["origin_mm"][1]),
    )


def _raise(path: Path, problems: Sequence[str], doc=None):
    if problems:
        if isinstance(doc, dict) and doc.get("version") not in (1, None) and doc.get("format") == "dgrid":
            raise UnknownVersion(f"{path}: " + "; ".join(problems))
        raise FormatError("\n".join(f"{path}: {p}" for p in problems))


def _read_csv_values(path: Path, nx: int, ny: int) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-numeric entry ({exc})") from exc
        if len(rows[-1]) != nx:
            raise FormatError(f"{path}:{lineno}: expected {nx} columns, got {len(rows[-1])}")
    if len(rows) != ny:
        raise FormatError(f"{path}: expected {ny} rows, got {len(rows)}")
    return np.array(rows, dtype=float)


def sidecar_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".json")


def read_dgrid(path) -> DoseGrid:
    """Load a DGRID v1 file (JSON, or CSV plus sidecar header) as a dose grid."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        head_path = sidecar_path(path)
        doc, text = _load_json(head_path)
        _raise(head_path, check_dgrid_header(doc, text, with_values=False), doc)
        values = _read_csv_values(path, doc["nx"], doc["ny"])
        problems = _check_values(values.ravel(), doc, "", doc["unit"])
        _raise(path, problems)
    else:
        doc, text = _load_json(path)
        _raise(path, check_dgrid_header(doc, text), doc)
        values = np.array(doc["values"], dtype=float).reshape(doc["ny"], doc["nx"])
    if doc["unit"] != "Gy":
        raise FormatError(f"{path}: expected a dose grid in Gy, got unit {doc['unit']!r}")
    return DoseGrid(_geometry(doc), values)


def dgrid_document(geometry: GridGeometry, values: np.ndarray, unit: str = "Gy") -> Dict[str, Any]:
    return {
        "format": "dgrid",
        "version": 1,
        "nx": geometry.nx,
        "ny": geometry.ny,
        "dx_mm": geometry.dx,
        "dy_mm": geometry.dy,
        "origin_mm": [geometry.origin_x, geometry.origin_y],
        "unit": unit,
        "values": [None if math.isnan(v) else v for v in np.asarray(values, dtype=float).ravel().tolist()],
    }


def dumps_dgrid(geometry: GridGeometry, values: np.ndarray, unit: str = "Gy") -> str:
    return json.dumps(dgrid_document(geometry, values, unit), allow_nan=False) + "\n"


def write_dgrid(path, grid: DoseGrid) -> None:
    Path(path).write_text(dumps_dgrid(grid.geometry, grid.values), encoding="utf-8")


# -- AUDIT v1 -----------------------------------------------------------------

FACTOR_IDS = tuple(f"F{k:02d}" for k in range(1, 10))


@dataclass
class CentreSpec:
    id: str
    roi: Optional[RoiSpec] = None
    reference_path: Optional[Path] = None
    evaluated_path: Optional[Path] = None
    synthetic: Optional[Dict[str, Any]] = None
    seed: Optional[int] = None


@dataclass
class AuditConfig:
    path: Path
    seed: int
    options: GammaOptions
    factor_levels: Optional[Dict[str, list]]
    centres: List[CentreSpec]
    grid: Optional[GridGeometry] = None
    baseline_roi: Optional[RoiSpec] = None
    raw: Dict[str, Any] = field(default_factory=dict)

    def input_paths(self) -> List[Path]:
        paths = []
        for c in self.centres:
            paths.extend(p for p in (c.reference_path, c.evaluated_path) if p is not None)
        return paths


def _roi_from(doc, where: str) -> RoiSpec:
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: ROI must be an object")
    center = doc.get("center_mm", [0.0, 0.0])
    try:
        return RoiSpec(
            doc.get("shape", "rectangle"),
            float(doc["half_width_mm"]),
            float(doc["half_height_mm"]),
            float(center[0]),
            float(center[1]),
        )
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise FormatError(f"{where}: bad ROI ({exc})") from exc


def _grid_from(doc, where: str) -> GridGeometry:
    try:
        origin = doc.get("origin_mm", [0.0, 0.0])
        return GridGeometry(
            int(doc["nx"]), int(doc["ny"]), float(doc["dx_mm"]), float(doc["dy_mm"]),
            float(origin[0]), float(origin[1]),
        )
    except (KeyError, TypeError, IndexError, ValueError, AttributeError) as exc:
        raise FormatError(f"{where}: bad grid ({exc})") from exc


def parse_audit_config(doc: Dict[str, Any], path, text: str = "") -> AuditConfig:
    """Validate an AUDIT v1 document; raise ``FormatError`` naming the offending line."""
    path = Path(path)

    def fail(key, msg):
        raise FormatError(f"{path}: line {_line_of(text, key)}: {key}: {msg}")

    if not isinstance(doc, dict):
        raise FormatError(f"{path}: line 1: document must be a JSON object")
    if doc.get("format") != "audit":
        fail("format", f"expected 'audit', got {doc.get('format')!r}")
    if doc.get("version") != 1:
        raise UnknownVersion(
            f"{path}: line {_line_of(text, 'version')}: version: unsupported version "
            f"{doc.get('version')!r} (this reader handles 1)"
        )
    seed = doc.get("seed", 0)
    if not (isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0):
        fail("seed", f"must be a non-negative integer, got {seed!r}")

    overrides = doc.get("gamma_options", {})
    if not isinstance(overrides, dict):
        fail("gamma_options", "must be an object")
    try:
        options = GammaOptions(**overrides)
    except TypeError as exc:
        fail("gamma_options", str(exc))

    levels = None
    if "factors" in doc:
        factors = doc["factors"]
        if not isinstance(factors, list):
            fail("factors", "must be a list")
        levels = {}
        for f in factors:
            if not isinstance(f, dict) or f.get("id") not in FACTOR_IDS:
                fail("factors", f"each factor needs an id in F01..F09, got {f!r}")
            lv = f.get("levels")
            if not isinstance(lv, list) or len(lv) < 2:
                fail("factors", f"{f['id']}: needs a list of at least 2 levels")
            if len(set(map(json.dumps, lv))) != len(lv):
                fail("factors", f"{f['id']}: level values must be distinct")
            levels[f["id"]] = lv
        missing = [fid for fid in FACTOR_IDS if fid not in levels]
        if missing:
            fail("factors", f"missing factors {', '.join(missing)}")

    grid = _grid_from(doc["grid"], f"{path}: grid") if "grid" in doc else None
    base_roi = _roi_from(doc["baseline_roi"], f"{path}: baseline_roi") if "baseline_roi" in doc else None

    centres = []
    raw_centres = doc.get("centres")
    if not isinstance(raw_centres, list) or not raw_centres:
        fail("centres", "must be a non-empty list")
    seen = set()
    for c in raw_centres:
        if not isinstance(c, dict) or not isinstance(c.get("id"), str):
            fail("centres", f"each centre needs a string id, got {c!r}")
        cid = c["id"]
        if cid in seen:
            fail("centres", f"duplicate centre id {cid!r}")
        seen.add(cid)
        roi = _roi_from(c["roi"], f"{path}: centre {cid}") if "roi" in c else base_roi
        if roi is None:
            fail("centres", f"centre {cid!r} has no roi and no baseline_roi is given")
        if "synthetic" in c:
            if grid is None:
                fail("centres", f"centre {cid!r} is synthetic but the config has no grid")
            cseed = c.get("seed")
            if cseed is not None and not (isinstance(cseed, int) and cseed >= 0):
                fail("centres", f"centre {cid!r}: seed must be a non-negative integer")
            centres.append(CentreSpec(cid, roi, synthetic=c["synthetic"], seed=cseed))
        elif "reference" in c and "evaluated" in c:
            base = path.parent
            centres.append(
                CentreSpec(cid, roi, base / c["reference"], base / c["evaluated"])
            )
        else:
            fail("centres", f"centre {cid!r} needs 'synthetic' or both 'reference' and 'evaluated'")
    return AuditConfig(path, seed, options, levels, centres, grid, base_roi, doc)


def read_audit_config(path) -> AuditConfig:
    path = Path(path)
    doc, text = _load_json(path)
    return parse_audit_config(doc, path, text)


def validate_file(path) -> List[str]:
    """Check a DGRID (JSON or CSV) or AUDIT file; return violations, empty when valid."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".csv":
            read_dgrid(path)
            return []
        doc, text = _load_json(path)
        kind = doc.get("format") if isinstance(doc, dict) else None
        if kind == "audit":
            parse_audit_config(doc, path, text)
            return []
        if kind == "dgrid":
            return [f"{path}: {p}" for p in check_dgrid_header(doc, text)]
        return [f"{path}: line {_line_of(text, 'format')}: format: expected 'dgrid' or 'audit'"]
    except FormatError as exc:
        return str(exc).splitlines()
