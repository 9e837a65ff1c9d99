"""Conditional autoencoder producing the reconstruction/residual augmented space."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import History, LayerStack, TrainingConfig, huber_loss, train_loop
from .errors import DegenerateColumnError, DimensionError, NumericInputError

logger = logging.getLogger(__name__)

CONDITION_CLAMP = (-0.05, 1.05)


@dataclass
class FeatureRecord:
    """One object: N features, L raw condition values, optional class tag."""

    x: np.ndarray
    k: np.ndarray
    label: str | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()
        self.k = np.asarray(self.k, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.k))):
            raise NumericInputError("FeatureRecord values must be finite")


@dataclass
class AffineScaler:
    """``transform(v) = (v - shift) / scale`` per column."""

    shift: np.ndarray
    scale: np.ndarray

    def transform(self, v):
        return (np.asarray(v, dtype=np.float64) - self.shift) / self.scale

    def inverse(self, v):
        return np.asarray(v, dtype=np.float64) * self.scale + self.shift


def _check_columns(a: np.ndarray, prefix: str) -> None:
    for j in range(a.shape[1]):
        if np.unique(a[:, j]).size < 2:
            raise DegenerateColumnError(f"column {prefix}{j + 1} has fewer than 2 distinct values")


def fit_scalers(features, conditions) -> tuple[AffineScaler, AffineScaler]:
    """Standard scaling for features, min-max onto [0, 1] for conditions."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    k = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    _check_columns(x, "f")
    _check_columns(k, "k")
    fs = AffineScaler(x.mean(axis=0), x.std(axis=0))
    lo, hi = k.min(axis=0), k.max(axis=0)
    cs = AffineScaler(lo, hi - lo)
    return fs, cs


@dataclass
class CaeConfig:
    latent_dim: int = 6
    encoder_hidden: tuple[int, ...] = (64, 32)
    decoder_hidden: tuple[int, ...] = (32, 64)
    activation: str = "leaky_relu"
    huber_delta: float = 1.0
    lr: float = 5e-4
    batch_size: int = 512
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class CaeModel:
    encoder: LayerStack
    decoder: LayerStack
    feature_scaler: AffineScaler
    condition_scaler: AffineScaler
    history: History = field(default_factory=History)

    @property
    def n_features(self) -> int:
        return self.decoder.out_dim

    @property
    def n_conditions(self) -> int:
        return self.encoder.cond_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim

    @property
    def n_params(self) -> int:
        return self.encoder.n_params + self.decoder.n_params

    def scale_conditions(self, k, warn: bool = True) -> np.ndarray:
        ks = self.condition_scaler.transform(np.atleast_2d(k))
        lo, hi = CONDITION_CLAMP
        outside = (ks < lo) | (ks > hi)
        if np.any(outside):
            if warn:
                logger.warning("%d condition values outside the training range; clamped to [%g, %g]",
                               int(outside.sum()), lo, hi)
            ks = np.clip(ks, lo, hi)
        return ks

    def _check(self, x, k) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = np.atleast_2d(np.asarray(k, dtype=np.float64))
        if x.shape[1] != self.n_features or k.shape[1] != self.n_conditions or len(x) != len(k):
            raise DimensionError(
                f"model expects {self.n_features} features and {self.n_conditions} conditions, "
                f"got {x.shape} and {k.shape}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(k))):
            raise NumericInputError("non-finite input to the autoencoder")
        return x, k

    def reconstruct_scaled(self, xs: np.ndarray, ks: np.ndarray) -> np.ndarray:
        z = self.encoder(xs, ks)
        return self.decoder(z, ks)

    def augment(self, x, k) -> np.ndarray:
        """Rows of ``[x', x' - x]`` in scaled feature space, shape (n, 2N)."""
        x, k = self._check(x, k)
        xs = self.feature_scaler.transform(x)
        ks = self.scale_conditions(k)
        rec = self.reconstruct_scaled(xs, ks)
        return np.hstack([rec, rec - xs])

    def augment_record(self, record: FeatureRecord) -> np.ndarray:
        return self.augment(record.x[None, :], record.k[None, :])[0]

    def reconstruct(self, x, k) -> np.ndarray:
        """Reconstruction in raw feature units (reporting only)."""
        x, k = self._check(x, k)
        rec = self.reconstruct_scaled(self.feature_scaler.transform(x), self.scale_conditions(k))
        return self.feature_scaler.inverse(rec)


def init_cae(n_features: int, n_conditions: int, config: CaeConfig,
             feature_scaler: AffineScaler, condition_scaler: AffineScaler) -> CaeModel:
    rng = np.random.default_rng(config.seed)
    z = config.latent_dim
    enc_sizes = [n_features, *config.encoder_hidden, z]
    dec_sizes = [z, *config.decoder_hidden, n_features]
    enc_act = [config.activation] * (len(enc_sizes) - 2) + ["linear"]
    dec_act = [config.activation] * (len(dec_sizes) - 2) + ["linear"]
    first_only = lambda n: [True] + [False] * (n - 1)  # noqa: E731
    encoder = LayerStack.build(enc_sizes, enc_act, rng, n_conditions, first_only(len(enc_act)))
    decoder = LayerStack.build(dec_sizes, dec_act, rng, n_conditions, first_only(len(dec_act)))
    return CaeModel(encoder, decoder, feature_scaler, condition_scaler)


def cae_loss_and_grad(model: CaeModel, xs: np.ndarray, ks: np.ndarray, delta: float):
    """Mean Huber reconstruction loss and gradients for encoder then decoder params."""
    z, tape_e = model.encoder.forward(xs, ks)
    rec, tape_d = model.decoder.forward(z, ks)
    loss, g = huber_loss(rec - xs, delta)
    g = g / g.size
    gd, gz, _ = model.decoder.backward(tape_d, g)
    ge, _, _ = model.encoder.backward(tape_e, gz)
    return loss, ge + gd


def train_cae(features, conditions, config: CaeConfig | None = None,
              val_features=None, val_conditions=None) -> CaeModel:
    """Fit scalers and train on reference-class records.

    Without an explicit validation set, the last ``val_fraction`` of a seeded
    shuffle is held out.
    """
    config = config or CaeConfig()
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    k = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    if val_features is None:
        order = np.random.default_rng(config.seed).permutation(len(x))
        n_val = max(1, int(round(config.val_fraction * len(x))))
        vi, ti = order[:n_val], order[n_val:]
        xv, kv, x, k = x[vi], k[vi], x[ti], k[ti]
    else:
        xv = np.atleast_2d(np.asarray(val_features, dtype=np.float64))
        kv = np.atleast_2d(np.asarray(val_conditions, dtype=np.float64))
    fs, cs = fit_scalers(x, k)
    model = init_cae(x.shape[1], k.shape[1], config, fs, cs)
    xs, ks = fs.transform(x), model.scale_conditions(k, warn=False)
    xvs, kvs = fs.transform(xv), model.scale_conditions(kv)
    params = model.encoder.params + model.decoder.params

    def touch():
        model.encoder.touch()
        model.decoder.touch()

    def val_loss():
        return huber_loss(model.reconstruct_scaled(xvs, kvs) - xvs, config.huber_delta)[0]

    tc = TrainingConfig(config.lr, config.batch_size, config.max_epochs, config.patience, config.seed)
    model.history = train_loop(
        params, lambda a, b: cae_loss_and_grad(model, a, b, config.huber_delta),
        val_loss, (xs, ks), tc, touch,
    )
    return model
