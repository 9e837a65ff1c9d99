import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fluxmut.errors import ConfigurationError, DimensionError
from fluxmut.flow import FlowConfig, init_flow
from fluxmut.kde import BinGrid, BinnedKde, KdeBin, build, scott_bandwidth


def identity_flow(dim, cond_dim):
    flow = init_flow(dim, cond_dim, FlowConfig(bijections=1, hidden=(4,)))
    for p in flow.params:
        p[...] = 0.0
    return flow


class TestGrid:
    def test_left_closed_right_open_last_closed(self):
        g = BinGrid([[0.0, 1.0, 2.0, 3.0]])
        assert g.locate([0.0])[0] == (0,)
        assert g.locate([1.0])[0] == (1,)
        assert g.locate([np.nextafter(1.0, 0)])[0] == (0,)
        assert g.locate([3.0])[0] == (2,)
        assert g.locate([3.0 + 1e-12])[0] is None
        assert g.locate([-1e-12])[0] is None

    @pytest.mark.parametrize("edges", [[[0.0]], [[0.0, 0.0, 1.0]], [[1.0, 0.0]]])
    def test_edges_strictly_increasing(self, edges):
        with pytest.raises(ConfigurationError):
            BinGrid(edges)

    def test_wrong_axis_count(self):
        with pytest.raises(DimensionError):
            BinGrid([[0, 1], [0, 1]]).locate([0.5])

    def test_from_widths_covers_range(self, rng):
        k = np.column_stack([rng.uniform(162, 262, 500), rng.uniform(0.1, 1.0, 500)])
        g = BinGrid.from_widths(k, [4.0, 0.04])
        assert all(key is not None for key in g.locate_many(k))

    @given(st.floats(0, 10))
    def test_every_in_range_value_lands_in_one_bin(self, v):
        g = BinGrid([np.linspace(0, 10, 6)])
        (i,), pos = g.locate([v])
        e = g.edges[0]
        assert e[i] <= v and (v < e[i + 1] or (i == 4 and v == 10.0))


class TestBuild:
    def test_uniform_occupancy(self, rng):
        n = 10000
        k = rng.uniform(0, 1, size=(n, 1))
        kde = BinnedKde.from_latents(rng.normal(size=(n, 2)), k, BinGrid([np.linspace(0, 1, 11)]))
        counts = np.array([b.count for b in kde.bins.values()])
        assert len(counts) == 10
        assert np.all(np.abs(counts - 1000) <= 3 * np.sqrt(1000))

    def test_single_record_is_sparse(self):
        kde = BinnedKde.from_latents([[0.1, 0.2]], [[0.5]], BinGrid([[0.0, 1.0]]), require_dense=False)
        (b,) = kde.bins.values()
        assert b.count == 1 and b.sparse

    def test_all_sparse_is_an_error(self, rng):
        with pytest.raises(ConfigurationError, match="too fine"):
            BinnedKde.from_latents(rng.normal(size=(100, 2)), rng.uniform(size=(100, 1)),
                                   BinGrid([np.linspace(0, 1, 11)]))

    def test_identity_flow_stores_inputs(self, rng):
        aug = rng.normal(size=(200, 4))
        k = rng.uniform(size=(200, 1))
        kde = build(identity_flow(4, 1), aug, k, BinGrid([[0.0, 0.5, 1.0]]))
        stored = np.vstack([b.points for b in kde.bins.values()])
        order = np.lexsort(aug.T)
        np.testing.assert_array_equal(stored[np.lexsort(stored.T)], aug[order])

    def test_scott_bandwidth(self, rng):
        pts = rng.normal(size=(400, 3)) * [1.0, 2.0, 0.0]
        h = scott_bandwidth(pts)
        np.testing.assert_allclose(h[:2], 400 ** (-1 / 7) * pts[:, :2].std(axis=0, ddof=1))
        assert h[2] == 1e-3

    def test_conditions_outside_grid(self, rng):
        with pytest.raises(ConfigurationError):
            BinnedKde.from_latents(rng.normal(size=(10, 2)), [[2.0]] * 10, BinGrid([[0.0, 1.0]]))


class TestDraw:
    def _single(self, z0, h, floor=1e-3):
        return BinnedKde(BinGrid([[0.0, 1.0]]), {(0,): KdeBin(np.array([z0]), np.array(h), False)},
                         bandwidth_floor=floor)

    def test_single_point_mean(self):
        z0, h = np.array([0.5, -2.0]), np.array([0.3, 0.7])
        s, _ = self._single(z0, h).draw([0.5], 10000, seed=4)
        assert np.all(np.abs(s.mean(axis=0) - z0) < 4 * h / np.sqrt(10000))

    def test_zero_bandwidth_returns_stored_points(self, rng):
        pts = rng.normal(size=(60, 3))
        kde = BinnedKde(BinGrid([[0.0, 1.0]]), {(0,): KdeBin(pts, np.zeros(3), False)}, bandwidth_floor=0.0)
        s, _ = kde.draw([0.2], 500, seed=1)
        assert all(any(np.array_equal(row, p) for p in pts) for row in s)

    def test_plain_kernel_draw(self, rng):
        pts = rng.normal(size=(80, 2))
        h = np.array([0.2, 0.4])
        kde = BinnedKde(BinGrid([[0.0, 1.0]]), {(0,): KdeBin(pts, h, False)}, variance_preserving=False)
        g = np.random.default_rng(9)
        pick = g.integers(0, 80, size=5)
        expected = pts[pick] + g.standard_normal((5, 2)) * h
        np.testing.assert_array_equal(kde.draw([0.5], 5, seed=9)[0], expected)

    def test_variance_preserving_keeps_spread(self, rng):
        pts = rng.normal(size=(2000, 3)) * [1.0, 3.0, 0.5]
        grid = BinGrid([[0.0, 1.0]])
        k = rng.uniform(size=(2000, 1))
        kde = BinnedKde.from_latents(pts, k, grid)
        plain = BinnedKde.from_latents(pts, k, grid, variance_preserving=False)
        s = kde.draw([0.5], 50000, seed=2)[0]
        t = plain.draw([0.5], 50000, seed=2)[0]
        sd = pts.std(axis=0, ddof=1)
        np.testing.assert_allclose(s.std(axis=0), sd, rtol=0.02)
        assert np.all(t.std(axis=0) > s.std(axis=0))

    def test_deterministic(self, rng):
        kde = BinnedKde.from_latents(rng.normal(size=(300, 2)), rng.uniform(size=(300, 1)), BinGrid([[0.0, 1.0]]))
        assert kde.draw([0.3], 100, seed=7)[0].tobytes() == kde.draw([0.3], 100, seed=7)[0].tobytes()

    def test_restriction(self, rng):
        pts = rng.normal(size=(500, 4))
        kde = BinnedKde.from_latents(pts, rng.uniform(size=(500, 1)), BinGrid([[0.0, 1.0]]),
                                     variance_preserving=False)
        b = kde.bins[(0,)]
        s, _ = kde.draw([0.5], 20000, seed=3)
        limit = np.linalg.norm(pts, axis=1).max() + 5 * np.linalg.norm(b.bandwidth)
        assert np.mean(np.linalg.norm(s, axis=1) <= limit) >= 0.999

    def test_sparse_bin_falls_back_to_nearest_dense(self, rng):
        grid = BinGrid([[0.0, 1.0, 2.0, 3.0]])
        k = np.concatenate([np.full(100, 0.5), np.full(3, 1.5), np.full(100, 2.5)])[:, None]
        z = rng.normal(size=(len(k), 2))
        z[-100:] += 50
        kde = BinnedKde.from_latents(z, k, grid)
        assert kde.resolve([1.5]) == ((0,), True)
        assert kde.resolve([1.9]) == ((2,), True)
        assert kde.resolve([2.2]) == ((2,), False)
        s, fallback = kde.draw([1.9], 10, seed=0)
        assert fallback and np.all(s > 40)

    def test_outside_grid_falls_back(self, rng):
        kde = BinnedKde.from_latents(rng.normal(size=(100, 2)), rng.uniform(size=(100, 1)), BinGrid([[0.0, 1.0]]))
        assert kde.resolve([5.0]) == ((0,), True)

    def test_empty_kde(self):
        with pytest.raises(ConfigurationError):
            BinnedKde(BinGrid([[0.0, 1.0]]), {}).draw([0.5], 3, seed=0)

    def test_m_positive(self, rng):
        kde = BinnedKde.from_latents(rng.normal(size=(100, 2)), rng.uniform(size=(100, 1)), BinGrid([[0.0, 1.0]]))
        with pytest.raises(ValueError):
            kde.draw([0.5], 0, seed=0)
