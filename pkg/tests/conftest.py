import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rggfpp.fpp import PassageDistribution, PassageTimeField, sample_weights
from rggfpp.geometry import BoxDomain, build_rgg, inject_points
from rggfpp.percolation import components
from rggfpp.rng import WEIGHTS, derive_rng

settings.register_profile(
    "suite",
    derandomize=True,
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def make_cloud(points, side=100.0):
    pts = np.asarray(points, dtype=float)
    return inject_points(BoxDomain(pts.shape[1], side), pts)


def make_graph(points, radius, side=100.0):
    return build_rgg(make_cloud(points, side), radius)


def weights_for(graph, seed=0, distribution=None):
    if distribution is None:
        distribution = PassageDistribution.exponential(1.0)
    return sample_weights(graph, distribution, derive_rng(seed, 0, WEIGHTS))


def field_from_values(graph, values) -> PassageTimeField:
    w = np.asarray(values, dtype=float)
    assert w.shape == (graph.m,)
    return PassageTimeField(weights=w)


@pytest.fixture(scope="session")
def chain_graph():
    """Five collinear points, spacing 1, radius 1.5: a path plus skip edges."""
    return make_graph([[float(k), 0.0] for k in range(5)], radius=1.5, side=20.0)


@pytest.fixture(scope="session")
def quad_graph():
    """The four-point fixture used for hand-checked passage times.

    Points (0,0), (1,0), (2,0), (1,1) with radius 1.5. Edges in id order:
    (0,1), (0,3), (1,2), (1,3), (2,3).
    """
    return make_graph([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 1.0]],
                      radius=1.5, side=20.0)


@pytest.fixture(scope="session")
def quad_field(quad_graph):
    return field_from_values(quad_graph, [0.5, 2.0, 0.9, 0.3, 0.35])


@pytest.fixture(scope="session")
def quad_labeling(quad_graph):
    return components(quad_graph)


def edge_weight_map(graph, field) -> dict[tuple[int, int], float]:
    out = {}
    for e in range(graph.m):
        u = int(graph.edges[e, 0])
        v = int(graph.edges[e, 1])
        out[(min(u, v), max(u, v))] = float(field.weights[e])
    return out


def random_points(rng: np.random.Generator, n: int, side: float, d: int = 2):
    return rng.uniform(-side / 2.0, side / 2.0, size=(n, d))
