"""Regenerate the quickstart grid pair and its golden CLI output.

The CLI result is cross-checked against the brute-force oracles in
tests/oracles.py before it is written; any disagreement above 1e-9 aborts.

    python scripts/make_golden.py
"""

import contextlib
import io
import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import audit_oracle  # noqa: E402

from gamma_audit.cli import main  # noqa: E402
from gamma_audit.dgrid import read_dgrid, write_dgrid  # noqa: E402
from gamma_audit.gamma import GICS  # noqa: E402
from gamma_audit.grid import GridGeometry, NoiseSpec, PhantomSpec, synth_phantom  # noqa: E402

OUT = ROOT / "demo" / "quickstart"
GEOM = GridGeometry(32, 32, 1.0, 1.0, -15.5, -15.5)


def regenerate() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    ref = synth_phantom(PhantomSpec(2.0, 5.0, (0.0, 0.0), 0.1), NoiseSpec(), GEOM)
    ev = synth_phantom(PhantomSpec(2.06, 5.2, (0.7, -0.4), 0.1), NoiseSpec(7, 1.5), GEOM)
    write_dgrid(OUT / "reference.json", ref)
    write_dgrid(OUT / "evaluated.json", ev)

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["gamma", str(OUT / "reference.json"), str(OUT / "evaluated.json")])
    if code != 0:
        print(f"gamma command failed with exit {code}", file=sys.stderr)
        return 1
    got = json.loads(buf.getvalue())

    ref, ev = read_dgrid(OUT / "reference.json"), read_dgrid(OUT / "evaluated.json")
    expected = audit_oracle(ref, ev, np.ones(GEOM.shape, bool), GICS)
    worst = max(abs(a - b) for a, b in zip(got.values(), expected))
    if worst > 1e-9:
        print(f"CLI disagrees with the oracle by {worst:g}", file=sys.stderr)
        return 1
    (OUT / "golden.json").write_text(buf.getvalue(), encoding="utf-8")
    print(f"golden.json written (max oracle deviation {worst:g})")
    return 0


if __name__ == "__main__":
    sys.exit(regenerate())
