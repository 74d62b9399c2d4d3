"""Shared fixtures and factories for the test suite."""

import numpy as np
import pytest

from dissipasynth import Plant


def scalar_plant():
    """The 1-state benchmark plant used throughout the suite:
    x+ = 0.5 x + u + w, z = x, y = x."""
    return Plant(A=0.5, B1=1.0, B=1.0, C1=1.0, D1=0.0, E=0.0, C=1.0, F=0.0)


def random_plant(rng, n, p=1, m=1, q=None, l=None, rho=0.7):
    """Random Schur-stable plant with all channel matrices populated."""
    q = n if q is None else q
    l = max(1, n - 1) if l is None else l
    A = rng.standard_normal((n, n))
    A *= rho / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
    return Plant(A=A, B1=rng.standard_normal((n, p)),
                 B=rng.standard_normal((n, m)),
                 C1=rng.standard_normal((q, n)), D1=np.zeros((q, p)),
                 E=0.1 * rng.standard_normal((q, m)),
                 C=rng.standard_normal((l, n)), F=np.zeros((l, p)))


def record_noisy(plant, N, eps, rng):
    """PRBS-driven record with componentwise-bounded noise satisfying the
    energy bound W W^T <= eps^2 N I."""
    import dissipasynth as ds

    n, p, m, q, l = plant.dims
    u = [rng.choice([-1.0, 1.0], m) for _ in range(N)]
    w = [rng.uniform(-eps, eps, p) / np.sqrt(p) for _ in range(N)]
    return ds.record(plant, u, w, np.zeros(n))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
