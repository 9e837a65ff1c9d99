import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fluxmut.cae import (AffineScaler, CaeConfig, FeatureRecord, cae_loss_and_grad, fit_scalers, init_cae,
                         train_cae)
from fluxmut.errors import DataSizeError, DegenerateColumnError, DimensionError, NumericInputError
from helpers import central_diff, rel_error


def _linear_data(rng, n, n_features=4, n_conditions=2, noise=0.01):
    k = rng.uniform(0, 1, size=(n, n_conditions))
    a = np.linspace(-1, 1, n_features * n_conditions).reshape(n_conditions, n_features)
    return k @ a + 0.2 + noise * rng.normal(size=(n, n_features)), k


class TestScalers:
    def test_condition_range_maps_to_unit(self):
        k = np.column_stack([np.linspace(162, 262, 11), np.linspace(0, 1, 11)])
        _, cs = fit_scalers(np.random.default_rng(0).normal(size=(11, 2)), k)
        np.testing.assert_allclose(cs.transform([[162, 0.0], [262, 1.0]]), [[0, 0], [1, 1]])

    def test_standard_normal_feature_is_near_identity(self, rng):
        n = 20000
        fs, _ = fit_scalers(rng.normal(size=(n, 3)), rng.uniform(size=(n, 1)))
        assert np.all(np.abs(fs.shift) < 5 / np.sqrt(n))
        assert np.all(np.abs(fs.scale - 1) < 5 / np.sqrt(n))

    @pytest.mark.parametrize("which, name", [("f", "f2"), ("k", "k1")])
    def test_constant_column_named(self, which, name):
        x = np.random.default_rng(0).normal(size=(10, 3))
        k = np.random.default_rng(1).uniform(size=(10, 2))
        if which == "f":
            x[:, 1] = 4.0
        else:
            k[:, 0] = 7.0
        with pytest.raises(DegenerateColumnError, match=name):
            fit_scalers(x, k)

    @given(arrays(np.float64, (6, 3), elements=st.floats(-1e6, 1e6)),
           arrays(np.float64, 3, elements=st.floats(-1e3, 1e3)),
           arrays(np.float64, 3, elements=st.floats(1e-3, 1e3)))
    def test_round_trip(self, v, shift, scale):
        s = AffineScaler(shift, scale)
        np.testing.assert_allclose(s.inverse(s.transform(v)), v, rtol=1e-12, atol=1e-12 * np.abs(v).max(initial=1))

    def test_training_conditions_scale_into_unit_interval(self, rng):
        x, k = _linear_data(rng, 300)
        _, cs = fit_scalers(x, k)
        ks = cs.transform(k)
        assert ks.min() == 0.0 and ks.max() == 1.0


class TestModel:
    def _model(self, rng, n_features=4, n_conditions=2, **cfg):
        x, k = _linear_data(rng, 200, n_features, n_conditions)
        fs, cs = fit_scalers(x, k)
        return init_cae(n_features, n_conditions, CaeConfig(**cfg), fs, cs), x, k

    def test_augment_dim_is_2n(self, rng):
        model, x, k = self._model(rng, n_features=14, n_conditions=2)
        assert model.augment(x[:5], k[:5]).shape == (5, 28)

    def test_residual_is_reconstruction_minus_input(self, rng):
        model, x, k = self._model(rng)
        aug = model.augment(x, k)
        xs = model.feature_scaler.transform(x)
        np.testing.assert_array_equal(aug[:, 4:], aug[:, :4] - xs)

    def test_augment_is_pure(self, rng):
        model, x, k = self._model(rng)
        assert model.augment(x, k).tobytes() == model.augment(x, k).tobytes()

    def test_augment_record(self, rng):
        model, x, k = self._model(rng)
        rec = FeatureRecord(x[3], k[3])
        np.testing.assert_array_equal(model.augment_record(rec), model.augment(x[3:4], k[3:4])[0])

    def test_zero_input_zero_weights_gives_zero_residual(self, rng):
        model, _, _ = self._model(rng)
        for p in model.encoder.params + model.decoder.params:
            p[...] = 0.0
        model.feature_scaler = AffineScaler(np.zeros(4), np.ones(4))
        aug = model.augment(np.zeros((1, 4)), np.full((1, 2), 0.5))
        np.testing.assert_array_equal(aug, np.zeros((1, 8)))

    def test_dimension_mismatch(self, rng):
        model, x, k = self._model(rng)
        with pytest.raises(DimensionError):
            model.augment(x[:, :3], k)

    def test_non_finite_record(self):
        with pytest.raises(NumericInputError):
            FeatureRecord([1.0, np.inf], [0.0])

    def test_out_of_range_conditions_clamped(self, rng, caplog):
        model, x, k = self._model(rng)
        ks = model.scale_conditions(np.array([[-10.0, 0.5], [0.5, 99.0]]))
        assert ks.min() == pytest.approx(-0.05) and ks.max() == pytest.approx(1.05)

    def test_encoder_and_decoder_both_see_conditions(self, rng):
        model, _, _ = self._model(rng)
        assert model.encoder.conditioned[0] and model.decoder.conditioned[0]

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_finite_difference(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n_f, n_c = int(rng.integers(1, 6)), int(rng.integers(1, 3))
        cfg = dict(latent_dim=int(rng.integers(1, 4)), encoder_hidden=(int(rng.integers(2, 6)),),
                   decoder_hidden=(int(rng.integers(2, 6)),), activation=str(rng.choice(["tanh", "leaky_relu"])),
                   seed=seed)
        model, _, _ = self._model(rng, n_f, n_c, **cfg)
        xs = rng.normal(size=(6, n_f)) * 2
        ks = rng.uniform(size=(6, n_c))
        delta = float(rng.uniform(0.3, 1.5))
        params = model.encoder.params + model.decoder.params

        def loss():
            return cae_loss_and_grad(model, xs, ks, delta)[0]

        model.encoder.touch()
        _, grads = cae_loss_and_grad(model, xs, ks, delta)
        assert rel_error(grads, central_diff(loss, params)) < 1e-4


class TestTraining:
    def test_learns_linear_map(self, rng):
        x, k = _linear_data(rng, 4000)
        xv, kv = _linear_data(rng, 500)
        model = train_cae(x, k, CaeConfig(latent_dim=2, lr=3e-3, batch_size=128, max_epochs=80, patience=10),
                          xv, kv)
        assert min(model.history.val_loss) < 1e-3
        seq = model.history.best_val_sequence
        assert all(b <= a for a, b in zip(seq, seq[1:]))

    def test_memorises_single_repeated_record(self):
        x = np.tile([[0.3, -1.2, 2.0]], (256, 1))
        k = np.tile([[0.5]], (256, 1))
        x[::2] += 1e-3
        k[::2] += 1e-3
        model = train_cae(x, k, CaeConfig(latent_dim=2, lr=3e-3, batch_size=64, max_epochs=300, patience=300))
        res = model.augment(x[1:2], k[1:2])[0, 3:]
        assert np.linalg.norm(model.feature_scaler.scale * res) < 1e-3

    def test_zero_epochs_equals_init(self, rng):
        x, k = _linear_data(rng, 600)
        cfg = CaeConfig(max_epochs=0, seed=5)
        model = train_cae(x, k, cfg)
        fresh = init_cae(4, 2, cfg, model.feature_scaler, model.condition_scaler)
        for a, b in zip(model.encoder.params + model.decoder.params, fresh.encoder.params + fresh.decoder.params):
            np.testing.assert_array_equal(a, b)

    def test_defaults(self):
        cfg = CaeConfig()
        assert (cfg.huber_delta, cfg.lr, cfg.latent_dim) == (1.0, 5e-4, 6)

    def test_too_few_records(self, rng):
        x, k = _linear_data(rng, 300)
        with pytest.raises(DataSizeError):
            train_cae(x, k, CaeConfig(batch_size=512))

    def test_out_of_class_residuals_are_larger(self, rng):
        x, k = _linear_data(rng, 4000)
        model = train_cae(x, k, CaeConfig(latent_dim=1, lr=3e-3, batch_size=128, max_epochs=40))
        xi, ki = _linear_data(rng, 500)
        xo = xi + rng.normal(0, 0.5, size=xi.shape)
        r_in = np.linalg.norm(model.augment(xi, ki)[:, 4:], axis=1).mean()
        r_out = np.linalg.norm(model.augment(xo, ki)[:, 4:], axis=1).mean()
        assert r_out > r_in
