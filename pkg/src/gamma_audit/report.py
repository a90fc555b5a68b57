"""CSV, JSON and PGM renderings of results.

Numbers are written as the shortest decimal that round-trips (Python's
``repr``); undefined values are ``NA`` in CSV and ``null`` in JSON.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from .correlation import CorrelationMatrix
from .gamma import METRICS, GammaMap

CSV_METRIC_COLUMNS = METRICS[:-1] + ("com_mm",)


def fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, str):
        return x
    x = float(x)
    return "NA" if math.isnan(x) else repr(x)


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def _csv(rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def results_csv(table) -> str:
    factor_ids = [f.id for f in table.factors]
    out: List[List[str]] = [["centre", *factor_ids, *CSV_METRIC_COLUMNS, "error"]]
    for row in table.rows:
        levels = [fmt(f.levels[k]) for f, k in zip(table.factors, row.point)]
        if row.ok:
            values = [fmt(v) for v in row.result.values()]
        else:
            values = ["NA"] * len(CSV_METRIC_COLUMNS)
        out.append([row.centre_id, *levels, *values, row.error or ""])
    return _csv(out)


def sensitivity_csv(sweep: Dict[str, Dict]) -> str:
    out = None
    for centre, per_metric in sweep.items():
        for metric, vec in per_metric.items():
            if out is None:
                out = [["centre", "metric", *vec.labels]]
            out.append([centre, metric, *(fmt(v) for v in vec.values)])
    return _csv(out or [["centre", "metric"]])


def sensitivity_json(sweep: Dict[str, Dict]) -> str:
    entries = []
    for centre, per_metric in sweep.items():
        for metric, vec in per_metric.items():
            entries.append(
                {
                    "centre": centre,
                    "metric": metric,
                    "sensitivities": (
                        {k: _num(v) for k, v in zip(vec.labels, vec.values)} if vec.defined else None
                    ),
                    "flag": vec.reason,
                }
            )
    return dumps_json(entries)


def matrix_csv(cm: CorrelationMatrix) -> str:
    out = [["", *cm.labels]]
    for label, row in zip(cm.labels, cm.r):
        out.append([label, *(fmt(v) for v in row)])
    return _csv(out)


def matrix_json(cm: CorrelationMatrix) -> str:
    return dumps_json(
        {
            "labels": list(cm.labels),
            "r": [[_num(v) for v in row] for row in cm.r],
            "n_samples": cm.n_samples.tolist(),
            "undefined": cm.undefined_labels(),
        }
    )


def pgm(gray: np.ndarray) -> bytes:
    """Binary 8-bit PGM; row 0 of the array is the first image row."""
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes()


def correlation_pgm(cm: CorrelationMatrix) -> bytes:
    """Linear grey scale, r = -1 -> 0 and r = +1 -> 255; undefined cells are 0."""
    r = np.nan_to_num(cm.r, nan=-1.0)
    return pgm(np.rint((r + 1.0) * 127.5))


def gamma_pgm(gmap: GammaMap) -> bytes:
    """Linear grey scale, gamma 0 -> 0 and gamma >= 2 -> 255; excluded nodes are 0."""
    g = np.nan_to_num(gmap.gamma, nan=0.0)
    return pgm(np.rint(np.clip(g, 0.0, 2.0) * 127.5))
