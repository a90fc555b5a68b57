import sys
from pathlib import Path

import numpy as np
import pytest

from gamma_audit.grid import DoseGrid, GridGeometry, NoiseSpec, PhantomSpec, synth_phantom

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
DEMO = ROOT / "demo"


def phantom_pair(seed, n=16, dx=1.0):
    """Reference blob and a shifted, rescaled, noisy evaluated blob on an n x n grid."""
    rng = np.random.default_rng(seed)
    half = (n - 1) * dx / 2
    geom = GridGeometry(n, n, dx, dx, -half, -half)
    sigma = rng.uniform(0.15, 0.3) * n * dx
    ref = synth_phantom(PhantomSpec(10.0, sigma, (0.0, 0.0), 0.2), NoiseSpec(), geom)
    shift = rng.uniform(-1.5, 1.5, 2)
    ev = synth_phantom(
        PhantomSpec(10.0 * rng.uniform(0.96, 1.04), sigma * rng.uniform(0.95, 1.05), tuple(shift), 0.2),
        NoiseSpec(int(seed), rng.uniform(0.5, 2.0)),
        geom,
    )
    return ref, ev, np.ones(geom.shape, dtype=bool)


def uniform(value, n=12):
    return DoseGrid.from_array(np.full((n, n), float(value)))


@pytest.fixture
def pair16():
    return phantom_pair(3, 16)


# One line per acceptance criterion, echoed again in the terminal summary so
# the verdicts are visible without -s.
ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
