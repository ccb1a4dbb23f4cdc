import numpy as np
import pytest

from cutlearn.curves import CurveBundle, NuisanceSet


def random_bundle(seed, m=7, n_causes=2, rows=1, max_total=0.3, grid_hi=5.0):
    """Random discrete hazard set whose survival stays comfortably above the
    denominator floor, so floored denominators never bind in identity tests."""
    rng = np.random.default_rng(seed)
    grid = np.sort(rng.uniform(0.1, grid_hi, size=m))
    cause = {
        j: rng.uniform(0.0, max_total / (n_causes * m) * 3.0, size=(rows, m))
        for j in range(1, n_causes + 1)
    }
    cens = rng.uniform(0.0, max_total / m * 2.0, size=(rows, m))
    return CurveBundle(grid, cause, cens)


def random_nuisance_set(seed, m=6, n_causes=2, rows=1, pi1=None):
    rng = np.random.default_rng(seed)
    grid = np.sort(rng.uniform(0.1, 5.0, size=m))
    arms = {}
    for a in (0, 1):
        cause = {j: rng.uniform(0.0, 0.1, size=(rows, m)) for j in range(1, n_causes + 1)}
        cens = rng.uniform(0.0, 0.15, size=(rows, m))
        arms[a] = CurveBundle(grid, cause, cens)
    p = rng.uniform(0.2, 0.8) if pi1 is None else pi1
    return NuisanceSet(np.full(rows, p), arms)


def observation_mix(rng, bundle, n_extra=6, horizon=None):
    """Times on and off the grid, every cause label, plus a beyond-grid row."""
    grid = bundle.grid
    hi = max(grid[-1], horizon or 0.0)
    times = np.concatenate([grid, rng.uniform(0.05, hi + 0.5, n_extra), [hi + 1.0]])
    causes = rng.integers(0, max(bundle.causes) + 1, size=times.size)
    return times, causes


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
