import numpy as np
import pytest

from starwalk.snch import build_snch

from _builders import chain, icosphere


@pytest.fixture(scope="session", autouse=True)
def _warm_compiled_queries():
    """Exercise every accelerated query once before any test runs.

    The first call into each compiled kernel pays its jit cost; doing that
    here keeps the wall-clock budgets measured by the slow tests honest.
    """
    rng = np.random.default_rng(0)
    for mesh in (chain([(0, 0), (1, 0), (1, 1)], 2), icosphere(0)):
        tree = build_snch(mesh)
        p = np.full(mesh.dimension, 0.25)
        d = np.zeros(mesh.dimension)
        d[0] = 1.0
        tree.closest_point(p)
        tree.silhouette_distance(p)
        tree.intersect(p, d)
        tree.intersect_all(p, d)
        tree.sample_point(p, 2.0, rng)
