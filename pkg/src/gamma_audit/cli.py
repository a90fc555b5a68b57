"""Command-line front end: ``gamma-audit {gamma,audit,validate}``.

Exit codes: 0 success, 2 input/format error, 3 computational error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .anova import sensitivity_sweep
from .correlation import center_correlation, factor_correlation, metric_correlation
from .design import build_centres, config_factors, full_factorial, run_design
from .dgrid import dumps_dgrid, read_audit_config, read_dgrid, validate_file
from .errors import ComputationError, FormatError
from .gamma import GICS, GammaCriterion, GammaOptions, audit_outputs
from .grid import RoiSpec, realize_roi
from .report import (
    correlation_pgm,
    dumps_json,
    gamma_pgm,
    matrix_csv,
    matrix_json,
    results_csv,
    sensitivity_csv,
    sensitivity_json,
)

log = logging.getLogger("gamma_audit")

EXIT_OK, EXIT_FORMAT, EXIT_COMPUTE = 0, 2, 3
JOBS_ENV = "GAMMA_AUDIT_JOBS"
GIC_METRICS = ("gpr", "median_gamma")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _criterion(text: str, name: str) -> GammaCriterion:
    try:
        pct, mm = text.split("/")
        return GammaCriterion(float(pct.rstrip("%")), float(mm.rstrip("m")), name)
    except ValueError as exc:
        raise FormatError(f"bad criterion {text!r}, expected e.g. 3/2 for 3%/2mm") from exc


def _write_tree(out: Path, files: Dict[str, bytes]) -> None:
    """Write files into a fresh temp dir next to ``out`` and move it into place."""
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name, data in sorted(files.items()):
            target = tmp / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        if out.exists():
            out.rmdir()  # only ever an empty directory, checked up front
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _check_out_dir(out: Path) -> None:
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise FormatError(f"output directory {out} exists and is not empty")


def cmd_gamma(args) -> int:
    reference = read_dgrid(args.reference)
    evaluated = read_dgrid(args.evaluated)
    criteria = tuple(
        _criterion(text, f"GIC{k}") for k, text in enumerate(args.criteria, 1)
    ) if args.criteria else GICS
    if len(criteria) != 4:
        raise FormatError("--criteria takes exactly four values")
    opt = GammaOptions(args.search_factor, args.step_factor, args.cutoff)

    g = evaluated.geometry
    ex, ey = g.extent
    center = args.roi_center or (g.origin_x + ex / 2, g.origin_y + ey / 2)
    half = args.roi_half or (ex / 2, ey / 2)
    roi = RoiSpec(args.roi_shape, half[0], half[1], center[0], center[1])
    if args.map_out:
        _check_out_dir(Path(args.map_out))

    mask = realize_roi(evaluated, roi)
    result, maps = audit_outputs(reference, evaluated, mask, opt, criteria, maps=True)

    if args.map_out:
        files = {}
        for k, gm in enumerate(maps, 1):
            files[f"gamma_gic{k}.json"] = dumps_dgrid(g, gm.gamma, unit="gamma").encode()
            if args.heatmaps:
                files[f"gamma_gic{k}.pgm"] = gamma_pgm(gm)
        _write_tree(Path(args.map_out), files)
    sys.stdout.write(dumps_json(result.as_dict()))
    return EXIT_OK


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise FormatError(f"{JOBS_ENV} must be an integer, got {env!r}") from exc
    return 1


def cmd_audit(args) -> int:
    config = read_audit_config(args.config)
    factors = config_factors(config)
    design = full_factorial(factors)
    n_rows = len(config.centres) * len(design)
    if args.dry_run:
        print(f"{len(config.centres)} centres x {len(design)} design points = {n_rows} rows")
        return EXIT_OK

    out = Path(args.out)
    _check_out_dir(out)
    jobs = _jobs(args)
    centres = build_centres(config, args.seed)
    log.info("evaluating %d rows with %d worker(s)", n_rows, jobs)
    table = run_design(centres, design, config.options, jobs=jobs)
    sweep = sensitivity_sweep(table)

    files: Dict[str, bytes] = {
        "results.csv": results_csv(table).encode(),
        "sensitivity.csv": sensitivity_csv(sweep).encode(),
        "sensitivity.json": sensitivity_json(sweep).encode(),
    }
    matrices = {"corr_metrics": metric_correlation(table)}
    if len(centres) < 2:
        log.warning("one centre only: skipping centre x centre correlations")
    for metric in GIC_METRICS:
        for gic in range(1, 5):
            if len(centres) >= 2:
                matrices[f"corr_centres_{metric}_gic{gic}"] = center_correlation(table, metric, gic)
            try:
                matrices[f"corr_factors_{metric}_gic{gic}"] = factor_correlation(sweep, metric, gic)
            except ComputationError as exc:
                log.warning("skipping factor correlation for %s gic%d: %s", metric, gic, exc)
    for name, cm in matrices.items():
        files[f"{name}.csv"] = matrix_csv(cm).encode()
        files[f"{name}.json"] = matrix_json(cm).encode()
        if args.heatmaps:
            files[f"heatmaps/{name}.pgm"] = correlation_pgm(cm)

    inputs = [Path(args.config), *config.input_paths()]
    manifest = {
        "tool": "gamma-audit",
        "version": __version__,
        "config": str(args.config),
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in inputs],
        "output_dir": str(args.out),
        "seed": config.seed if args.seed is None else args.seed,
        "seed_override": args.seed,
        "heatmaps": bool(args.heatmaps),
        "design": {
            "centres": len(centres),
            "points": len(design),
            "rows": len(table.rows),
            "failed_rows": sum(not r.ok for r in table.rows),
        },
        "outputs": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(files.items())},
    }
    files["manifest.json"] = dumps_json(manifest).encode()
    _write_tree(out, files)
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    status = EXIT_OK
    for path in args.paths:
        problems = validate_file(path)
        if problems:
            status = EXIT_FORMAT
            for p in problems:
                print(p, file=sys.stderr)
        else:
            print(f"{path}: OK")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gamma-audit",
        description="Gamma-index audit metrics, factorial sensitivities and correlations.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gamma", help="compare two dose grids and print the 12 audit outputs")
    g.add_argument("reference", help="reference (planned) DGRID file")
    g.add_argument("evaluated", help="evaluated (measured) DGRID file")
    g.add_argument("--roi-shape", choices=("rectangle", "ellipse"), default="rectangle")
    g.add_argument("--roi-center", nargs=2, type=float, metavar=("X", "Y"))
    g.add_argument("--roi-half", nargs=2, type=float, metavar=("W", "H"),
                   help="ROI half width and height in mm (default: whole grid)")
    g.add_argument("--criteria", nargs=4, metavar="PCT/MM",
                   help="four gamma criteria (default 5/2 3/2 2/2 5/1)")
    g.add_argument("--search-factor", type=float, default=3.0)
    g.add_argument("--step-factor", type=float, default=10.0)
    g.add_argument("--cutoff", type=float, default=10.0, help="low-dose cutoff in %% of max")
    g.add_argument("--map-out", metavar="DIR", help="write per-criterion gamma maps here")
    g.add_argument("--heatmaps", action="store_true", help="also write PGM renderings")
    g.set_defaults(func=cmd_gamma)

    a = sub.add_parser("audit", help="run a full factorial audit from an AUDIT v1 config")
    a.add_argument("config")
    a.add_argument("--out", default="audit-out", metavar="DIR")
    a.add_argument("--seed", type=int, help="override the config seed")
    a.add_argument("--heatmaps", action="store_true")
    a.add_argument("--dry-run", action="store_true", help="print the design size and exit")
    a.add_argument("--jobs", type=int, help=f"worker processes (fallback: ${JOBS_ENV}, else 1)")
    a.set_defaults(func=cmd_audit)

    v = sub.add_parser("validate", help="check DGRID / AUDIT files")
    v.add_argument("paths", nargs="+")
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ComputationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
