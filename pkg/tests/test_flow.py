import numpy as np
import pytest

from fluxmut.core import Dense, LayerStack
from fluxmut.errors import DimensionError, NumericOverflowError
from fluxmut.flow import (LOG_2PI, FlowConfig, FlowModel, MadeBlock, init_flow, made_masks,
                          reverse_permutation, train_flow)
from helpers import central_diff, rel_error


def random_flow(rng, dim, cond_dim, bijections=3, hidden=(8,), scale=0.5, seed=0):
    flow = init_flow(dim, cond_dim, FlowConfig(bijections=bijections, hidden=hidden, seed=seed))
    for p in flow.params:
        p += rng.normal(scale=scale, size=p.shape)
    return flow


def constant_block(dim, cond_dim, mu, alpha):
    """A one-layer MADE whose outputs are constant: shift ``mu`` and log-scale ``alpha``."""
    w = np.zeros((dim + cond_dim, 2 * dim))
    net = LayerStack([Dense(w, np.concatenate([np.full(dim, mu), np.full(dim, alpha)]), "linear",
                            np.ones_like(w))], [True], cond_dim)
    return MadeBlock(net)


def identity_flow(dim, cond_dim, bijections=3):
    # block 0 is unpermuted, the next two reversals cancel
    flow = init_flow(dim, cond_dim, FlowConfig(bijections=bijections, hidden=(4,)))
    for p in flow.params:
        p[...] = 0.0
    return flow


def numerical_jacobian(f, x, eps=1e-6):
    d = x.size
    jac = np.empty((d, d))
    for j in range(d):
        up, dn = x.copy(), x.copy()
        up[j] += eps
        dn[j] -= eps
        jac[:, j] = (f(up) - f(dn)) / (2 * eps)
    return jac


class TestClosedForms:
    def test_identity_log_prob_at_origin(self):
        flow = identity_flow(2, 1)
        assert flow.log_prob(np.zeros((1, 2)), [[0.3]])[0] == pytest.approx(-LOG_2PI, abs=1e-12)

    def test_identity_maps_are_identity(self, rng):
        flow = identity_flow(3, 2)
        x = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(flow.inverse(x, rng.uniform(size=(5, 2))), x)
        np.testing.assert_array_equal(flow.sample(x, rng.uniform(size=(5, 2))), x)

    def test_constant_affine(self):
        flow = FlowModel([constant_block(1, 1, 1.0, np.log(2.0))], [np.arange(1)])
        z = flow.inverse([[3.0]], [[0.0]])
        assert z[0, 0] == pytest.approx(1.0)
        expected = -0.5 - 0.5 * LOG_2PI - np.log(2.0)
        assert flow.log_prob([[3.0]], [[0.0]])[0] == pytest.approx(expected)
        assert flow.sample([[1.0]], [[0.0]])[0, 0] == pytest.approx(3.0)

    def test_identity_nll_on_standard_normal(self, rng):
        flow = identity_flow(2, 1)
        x = rng.normal(size=(20000, 2))
        lp = flow.log_prob(x, np.zeros((1, 1)))
        se = lp.std() / np.sqrt(lp.size)
        assert abs(-lp.mean() - (1 + LOG_2PI)) < 3 * se


class TestStructure:
    @pytest.mark.parametrize("dim, hidden", [(2, (5,)), (3, (7, 4)), (5, (16, 16))])
    def test_block_jacobian_is_triangular(self, rng, dim, hidden):
        block = MadeBlock.build(dim, 2, hidden, rng, out_scale=1.0)
        for p in block.net.params:
            p += rng.normal(scale=0.3, size=p.shape)
        k = rng.uniform(size=(1, 2))
        x = rng.normal(size=dim)
        jac = numerical_jacobian(lambda v: block.inverse(v[None, :], k)[0][0], x)
        assert np.all(np.abs(np.triu(jac, 1)) < 1e-8)

    def test_conditions_reach_every_output(self, rng):
        block = MadeBlock.build(3, 2, (9,), rng, out_scale=1.0)
        x = rng.normal(size=(1, 3))
        k0 = rng.uniform(size=(1, 2))
        base = block.inverse(x, k0)[0][0]
        moved = block.inverse(x, k0 + 0.1)[0][0]
        assert np.all(moved != base)

    def test_mask_shapes(self):
        masks = made_masks(4, 2, (10, 6))
        assert [m.shape for m in masks] == [(6, 10), (12, 6), (6, 8)]

    def test_reverse_permutation_is_involution(self):
        p = reverse_permutation(7)
        np.testing.assert_array_equal(p[p], np.arange(7))

    def test_first_block_identity_then_reversed(self):
        flow = init_flow(4, 1, FlowConfig(bijections=3, hidden=(4,)))
        np.testing.assert_array_equal(flow.permutations[0], np.arange(4))
        for p in flow.permutations[1:]:
            np.testing.assert_array_equal(p, [3, 2, 1, 0])

    def test_dimension_errors(self, rng):
        flow = random_flow(rng, 3, 2)
        with pytest.raises(DimensionError):
            flow.log_prob(np.zeros((2, 4)), np.zeros((2, 2)))
        with pytest.raises(DimensionError):
            flow.nll_loss_and_grad(np.zeros((0, 3)), np.zeros((0, 2)))

    def test_overflow_names_layer(self):
        flow = FlowModel([constant_block(1, 1, 0.0, -7.0)] * 3, [np.arange(1)] * 3)
        with pytest.raises(NumericOverflowError, match="bijection"):
            flow.inverse([[1e300]], [[0.0]])


class TestExactness:
    def test_round_trip(self, rng):
        flow = random_flow(rng, 6, 2, bijections=4, hidden=(16, 16))
        x = rng.normal(size=(1000, 6)) * 2
        k = rng.uniform(size=(1000, 2))
        assert np.max(np.abs(flow.sample(flow.inverse(x, k), k) - x)) < 1e-6

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_logdet_matches_numerical_jacobian(self, rng, dim):
        flow = random_flow(rng, dim, 1, bijections=3)
        k = rng.uniform(size=(1, 1))
        for _ in range(5):
            x = rng.normal(size=dim)
            _, ld = flow.inverse(x[None, :], k, return_logdet=True)
            jac = numerical_jacobian(lambda v: flow.inverse(v[None, :], k)[0], x)
            assert ld[0] == pytest.approx(np.linalg.slogdet(jac)[1], abs=1e-4)

    def test_density_integrates_to_one(self, rng):
        flow = random_flow(rng, 2, 1, bijections=2, scale=0.2)
        g = np.linspace(-8, 8, 401)
        xx, yy = np.meshgrid(g, g)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        dens = np.exp(flow.log_prob(pts, [[0.4]]))
        assert dens.sum() * (g[1] - g[0]) ** 2 == pytest.approx(1.0, abs=0.02)


class TestGradients:
    @pytest.mark.parametrize("seed", range(20))
    def test_nll_gradient(self, seed):
        rng = np.random.default_rng(500 + seed)
        dim, cond = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        flow = random_flow(rng, dim, cond, bijections=int(rng.integers(1, 4)),
                           hidden=(int(rng.integers(dim, 2 * dim + 3)),), scale=0.3, seed=seed)
        x = rng.normal(size=(5, dim))
        k = rng.uniform(size=(5, cond))
        _, grads = flow.nll_loss_and_grad(x, k)
        fd = central_diff(lambda: flow.nll_loss_and_grad(x, k)[0], flow.params)
        assert rel_error(grads, fd) < 1e-4

    def test_clamped_alpha_has_zero_gradient(self):
        flow = FlowModel([constant_block(2, 1, 0.0, 9.0)], [np.arange(2)])
        _, grads = flow.nll_loss_and_grad(np.ones((3, 2)), np.zeros((3, 1)))
        assert np.all(grads[1][2:] == 0)

    def test_repeated_point_batch_is_finite(self, rng):
        flow = random_flow(rng, 3, 1)
        loss, grads = flow.nll_loss_and_grad(np.tile([[0.2, -1, 3]], (8, 1)), np.full((8, 1), 0.5))
        assert np.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads)


class TestTraining:
    def test_learns_conditional_mean(self, rng):
        k = rng.uniform(size=(3000, 1))
        x = rng.normal(size=(3000, 2)) + k
        kv = rng.uniform(size=(500, 1))
        xv = rng.normal(size=(500, 2)) + kv
        flow = train_flow(x, k, FlowConfig(bijections=2, hidden=(16,), lr=5e-3, batch_size=100, max_epochs=25,
                                           patience=25), xv, kv)
        seq = flow.history.best_val_sequence
        assert seq[-1] < seq[0]
        assert all(b <= a for a, b in zip(seq, seq[1:]))
        z = flow.inverse(xv, kv)
        assert abs(np.corrcoef(z[:, 0], kv[:, 0])[0, 1]) < 0.15

    def test_samples_match_generator(self, rng):
        """Moment check: 10k samples at fixed k against the generator's mean and covariance."""
        n = 6000
        k = rng.uniform(size=(n, 1))
        cov = np.array([[1.0, 0.6], [0.6, 0.8]])
        chol = np.linalg.cholesky(cov)
        x = rng.normal(size=(n, 2)) @ chol.T + np.column_stack([2 * k[:, 0], -k[:, 0]])
        flow = train_flow(x, k, FlowConfig(bijections=3, hidden=(24, 24), lr=3e-3, batch_size=200,
                                           max_epochs=40, patience=10))
        k0 = 0.5
        s = flow.sample(rng.normal(size=(10000, 2)), [[k0]])
        np.testing.assert_allclose(s.mean(axis=0), [2 * k0, -k0], atol=0.05 * np.sqrt(np.diag(cov)).max())
        np.testing.assert_allclose(np.cov(s.T), cov, atol=0.05 * cov.max())
