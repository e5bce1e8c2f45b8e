import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import (edge_weight_map, field_from_values, make_cloud,
                      make_graph, random_points, weights_for)
from oracles import dijkstra_dict, enumerate_min_path
from rggfpp.fpp import (DistributionRejected, PassageDistribution,
                        PassageTimeField, first_passage_time, fpt_all_from,
                        fpt_values_from, growth_set, sample_weights)
from rggfpp.geometry import build_rgg
from rggfpp.percolation import closest_vertex_q, components, hop_distances_from
from rggfpp.rng import FIXTURE, WEIGHTS, derive_rng


class TestDistributions:
    def test_exponential_rejects_nonpositive_rate(self):
        with pytest.raises(DistributionRejected, match="rate must be positive"):
            PassageDistribution.exponential(0.0).validate()
        with pytest.raises(DistributionRejected):
            PassageDistribution.exponential(-1.0).validate()

    def test_uniform_rejects_mass_at_zero_and_below(self):
        # support must be strictly positive: a == 0 puts mass at zero times
        for a, b in [(0.0, 1.0), (-0.5, 1.0), (1.0, 1.0), (2.0, 1.0)]:
            with pytest.raises(DistributionRejected, match="0 < a < b"):
                PassageDistribution.uniform_shifted(a, b).validate()
        PassageDistribution.uniform_shifted(0.5, 1.5).validate()

    def test_lognormal_rejects_bad_params(self):
        with pytest.raises(DistributionRejected, match="sigma"):
            PassageDistribution.lognormal(0.0, 0.0).validate()
        with pytest.raises(DistributionRejected, match="cap quantile"):
            PassageDistribution.lognormal(0.0, 1.0, cap_quantile=1.0).validate()

    def test_unknown_kind_rejected(self):
        with pytest.raises(DistributionRejected, match="unknown"):
            PassageDistribution("weibull", (1.0,)).validate()

    @pytest.mark.parametrize("dist", [
        PassageDistribution.exponential(2.0),
        PassageDistribution.uniform_shifted(0.25, 1.75),
        PassageDistribution.lognormal(0.0, 1.0),
    ])
    def test_samples_positive_and_reproducible(self, dist):
        a = dist.sample(derive_rng(1, 0, WEIGHTS), 4000)
        b = dist.sample(derive_rng(1, 0, WEIGHTS), 4000)
        assert np.array_equal(a, b)
        assert np.all(a > 0)

    def test_lognormal_cap_bounds_samples(self):
        # truncation keeps every draw below the cap quantile of the full law
        dist = PassageDistribution.lognormal(0.0, 1.0, cap_quantile=0.9)
        x = dist.sample(derive_rng(2, 0, WEIGHTS), 50_000)
        from scipy.special import ndtri
        cap_value = math.exp(ndtri(0.9))
        assert float(x.max()) <= cap_value
        # and the truncated mean sits below the untruncated one
        assert float(x.mean()) < math.exp(0.5)

    def test_describe_strings(self):
        assert PassageDistribution.exponential(1.0).describe() == "exponential(1.0,)"
        assert "@" in PassageDistribution.lognormal(0.0, 1.0).describe()

    def test_field_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError, match="strictly positive"):
            PassageTimeField(weights=np.array([1.0, 0.0]))


class TestHandCheckedPassage:
    def test_quad_fixture_total_and_path(self, quad_graph, quad_field, quad_labeling):
        # paths 0->2: direct 0-1-2 costs 1.4, detour 0-1-3-2 costs 1.15
        total, geo = first_passage_time(quad_graph, quad_field,
                                        [0.0, 0.0], [2.0, 0.0], quad_labeling)
        assert total == pytest.approx(1.15, abs=1e-12)
        assert geo.vertices.tolist() == [0, 1, 3, 2]
        assert geo.recompute_total(quad_graph, quad_field) == pytest.approx(total, abs=1e-12)

    def test_snapping_uses_giant_nearest(self, quad_graph, quad_field, quad_labeling):
        # query points off the vertices snap to q(x) before the passage query
        total, geo = first_passage_time(quad_graph, quad_field,
                                        [-0.3, 0.1], [2.2, -0.4], quad_labeling)
        assert geo.vertices[0] == 0
        assert geo.vertices[-1] == 2
        assert total == pytest.approx(1.15, abs=1e-12)

    def test_polyline_matches_vertices(self, quad_graph, quad_field, quad_labeling):
        _, geo = first_passage_time(quad_graph, quad_field,
                                    [0.0, 0.0], [2.0, 0.0], quad_labeling)
        assert np.array_equal(geo.polyline, quad_graph.cloud.points[geo.vertices])


def random_weighted_graph(seed, n, radius=2.5, side=10.0):
    rng = np.random.default_rng(seed)
    pts = random_points(rng, n, side)
    g = build_rgg(make_cloud(pts, side), radius)
    w = rng.uniform(0.1, 2.0, size=g.m)
    return g, field_from_values(g, w)


class TestAgainstEnumeration:
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 11))
    def test_exact_on_small_graphs(self, seed, n):
        g, field = random_weighted_graph(seed, n)
        lab = components(g)
        wmap = edge_weight_map(g, field)
        src = closest_vertex_q(g, lab, [0.0, 0.0])
        res = fpt_all_from(g, field, [0.0, 0.0], lab)
        assert res.source == src
        for v in range(g.n):
            want, _ = enumerate_min_path(g.n, wmap, src, v)
            assert res.times[v] == pytest.approx(want, rel=1e-12) or \
                (math.isinf(want) and math.isinf(res.times[v]))

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 40))
    def test_matches_heap_dijkstra(self, seed, n):
        g, field = random_weighted_graph(seed, n)
        lab = components(g)
        res = fpt_all_from(g, field, [0.0, 0.0], lab)
        want = dijkstra_dict(g.n, edge_weight_map(g, field), res.source)
        for v in range(g.n):
            assert res.times[v] == pytest.approx(want.get(v, math.inf), rel=1e-12) or \
                (v not in want and math.isinf(res.times[v]))

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 30))
    def test_path_to_realizes_the_time(self, seed, n):
        g, field = random_weighted_graph(seed, n)
        lab = components(g)
        res = fpt_all_from(g, field, [0.0, 0.0], lab)
        wmap = edge_weight_map(g, field)
        for v in np.flatnonzero(np.isfinite(res.times)):
            path = res.path_to(int(v))
            assert path[0] == res.source and path[-1] == v
            total = sum(wmap[(min(a, b), max(a, b))]
                        for a, b in zip(path[:-1], path[1:]))
            assert total == pytest.approx(float(res.times[v]), rel=1e-12)
            # passage times are nondecreasing along a geodesic
            assert all(res.times[a] <= res.times[b] + 1e-15
                       for a, b in zip(path[:-1], path[1:]))

    def test_values_variant_agrees(self):
        g, field = random_weighted_graph(123, 60)
        lab = components(g)
        res = fpt_all_from(g, field, [1.0, -2.0], lab)
        src, times = fpt_values_from(g, field, [1.0, -2.0], lab)
        assert src == res.source
        assert np.array_equal(times, res.times)


class TestUnitWeightsReduceToHops:
    def test_passage_equals_chemical_distance(self):
        rng = np.random.default_rng(17)
        side = 16.0
        pts = random_points(rng, 150, side)
        g = build_rgg(make_cloud(pts, side), 1.8)
        field = field_from_values(g, np.ones(g.m))
        res = fpt_all_from(g, field, [0.0, 0.0])
        hops = hop_distances_from(g, res.source)
        assert np.array_equal(res.times, hops)


class TestSampledWeights:
    def test_alignment_and_lineage(self):
        g = make_graph([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], radius=1.5, side=10.0)
        field = sample_weights(g, PassageDistribution.exponential(1.0),
                               derive_rng(9, 4, WEIGHTS), lineage=(9, 4, WEIGHTS))
        assert field.weights.shape == (g.m,)
        assert field.lineage == (9, 4, WEIGHTS)
        again = sample_weights(g, PassageDistribution.exponential(1.0),
                               derive_rng(9, 4, WEIGHTS))
        assert np.array_equal(field.weights, again.weights)

    def test_weight_and_point_streams_differ(self):
        rng_w = derive_rng(9, 4, WEIGHTS)
        rng_f = derive_rng(9, 4, FIXTURE)
        assert not np.array_equal(rng_w.uniform(size=8), rng_f.uniform(size=8))


class TestGrowthSet:
    def build(self):
        rng = np.random.default_rng(31)
        side = 20.0
        pts = random_points(rng, 420, side)
        g = build_rgg(make_cloud(pts, side), 1.6)
        field = weights_for(g, seed=31)
        lab = components(g)
        res = fpt_all_from(g, field, [0.0, 0.0], lab)
        return g, lab, res

    def test_radii_invariants(self):
        g, lab, res = self.build()
        for t in [0.0, 0.4, 1.2, 3.0, 1e9]:
            gs = growth_set(g, lab, res.times, t, res.source)
            assert 0.0 <= gs.inner_radius <= gs.outer_radius
            assert np.all(res.times[gs.members] <= t)
            # members only come from the giant component
            assert np.all(lab.label[gs.members] == lab.giant)
            # every giant vertex strictly inside the inner ball is a member
            pts = g.cloud.points
            center = pts[res.source]
            dist = np.sqrt(((pts[lab.giant_vertices()] - center) ** 2).sum(axis=1))
            inside = lab.giant_vertices()[dist < gs.inner_radius]
            assert np.isin(inside, gs.members).all()

    def test_negative_threshold_is_empty(self):
        g, lab, res = self.build()
        gs = growth_set(g, lab, res.times, -1.0, res.source)
        assert len(gs.members) == 0
        assert gs.inner_radius == 0.0 and gs.outer_radius == 0.0

    def test_everything_reached_pins_inner_to_outer(self):
        g, lab, res = self.build()
        gs = growth_set(g, lab, res.times, 1e9, res.source)
        assert len(gs.members) == len(lab.giant_vertices())
        assert gs.inner_radius == gs.outer_radius
