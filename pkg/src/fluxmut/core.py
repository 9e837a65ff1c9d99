"""Dense layers with hand-written reverse-mode gradients, Adam, and the Huber loss.

Everything runs in float64. A :class:`LayerStack` is a sequence of affine
layers, each optionally receiving a condition vector concatenated to its
input and optionally carrying a binary connectivity mask (used by MADE).
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (DataSizeError, DimensionError, NumericInputError, NumericOverflowError,
                     StaleTapeError)

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01

ACTIVATIONS = ("linear", "tanh", "relu", "leaky_relu")


def _activate(kind: str, pre: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return pre
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "leaky_relu":
        return np.where(pre > 0.0, pre, LEAKY_SLOPE * pre)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(kind: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if kind == "linear":
        return np.ones_like(pre)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "relu":
        return (pre > 0.0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(pre > 0.0, 1.0, LEAKY_SLOPE)
    raise ValueError(f"unknown activation {kind!r}")


def huber_loss(residual, delta: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean Huber loss and its elementwise derivative.

    The returned gradient is the derivative of each element's loss with
    respect to that element (``r`` inside ``|r| <= delta``, ``delta*sign(r)``
    outside). It is *not* divided by the element count; callers that
    differentiate the mean must scale it themselves.
    """
    r = np.asarray(residual, dtype=np.float64)
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if not np.all(np.isfinite(r)):
        raise NumericInputError("huber_loss: residual contains non-finite values")
    a = np.abs(r)
    quad = a <= delta
    per_elem = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    grad = np.where(quad, r, delta * np.sign(r))
    loss = float(per_elem.mean()) if per_elem.size else 0.0
    return loss, grad


@dataclass
class Dense:
    """Affine map ``act(x @ W + b)``; ``W`` has shape (in, out)."""

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "linear"
    mask: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def effective_weights(self) -> np.ndarray:
        if self.mask is None:
            return self.weights
        return self.weights * self.mask


@dataclass
class Tape:
    """Activation cache from :meth:`LayerStack.forward`."""

    stack_id: int
    version: int
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    outputs: list[np.ndarray]
    x_dim: int
    cond_dim: int


class LayerStack:
    """Ordered affine layers with optional per-layer condition concatenation.

    ``conditioned[i]`` set means layer ``i`` sees ``hstack([h, cond])``
    instead of ``h``. Parameters are exposed as a flat list
    ``[W0, b0, W1, b1, ...]`` that optimizers update in place; call
    :meth:`touch` after an in-place update so outstanding tapes go stale.
    """

    def __init__(self, layers: Sequence[Dense], conditioned: Sequence[bool] | None = None,
                 cond_dim: int = 0):
        self.layers = list(layers)
        if conditioned is None:
            conditioned = [False] * len(self.layers)
        self.conditioned = [bool(c) for c in conditioned]
        if len(self.conditioned) != len(self.layers):
            raise DimensionError("conditioned flags must match layer count")
        self.cond_dim = int(cond_dim) if any(self.conditioned) else 0
        self.version = 0
        for i in range(1, len(self.layers)):
            expected = self.layers[i - 1].out_dim + (self.cond_dim if self.conditioned[i] else 0)
            if self.layers[i].in_dim != expected:
                raise DimensionError(
                    f"layer {i} expects input dim {self.layers[i].in_dim}, previous layer gives {expected}"
                )

    @classmethod
    def build(cls, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator,
              cond_dim: int = 0, conditioned: Sequence[bool] | None = None,
              masks: Sequence[np.ndarray | None] | None = None,
              out_scale: float = 1.0) -> "LayerStack":
        """Kaiming-uniform initialised stack. ``sizes`` excludes condition inputs.

        ``out_scale`` multiplies the last layer's initial weights, which lets a
        flow start close to the identity.
        """
        n = len(sizes) - 1
        if len(activations) != n:
            raise DimensionError("need one activation per layer")
        conditioned = list(conditioned) if conditioned is not None else [False] * n
        layers = []
        for i in range(n):
            fan_in = sizes[i] + (cond_dim if conditioned[i] else 0)
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, sizes[i + 1]))
            if i == n - 1:
                w *= out_scale
            mask = None if masks is None else masks[i]
            layers.append(Dense(w, np.zeros(sizes[i + 1]), activations[i], mask))
        return cls(layers, conditioned, cond_dim)

    @property
    def in_dim(self) -> int:
        first = self.layers[0]
        return first.in_dim - (self.cond_dim if self.conditioned[0] else 0)

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    @property
    def n_params(self) -> int:
        """Trainable count, weights plus biases. Masked-out weights still count."""
        return sum(p.size for p in self.params)

    def touch(self) -> None:
        self.version += 1

    def forward(self, x, cond=None) -> tuple[np.ndarray, Tape]:
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise DimensionError(f"expected input of shape (batch, {self.in_dim}), got {h.shape}")
        if self.cond_dim:
            if cond is None:
                raise DimensionError("this stack requires a condition input")
            cond = np.asarray(cond, dtype=np.float64)
            if cond.shape != (h.shape[0], self.cond_dim):
                raise DimensionError(
                    f"expected condition of shape ({h.shape[0]}, {self.cond_dim}), got {cond.shape}"
                )
        inputs, pres, outs = [], [], []
        with np.errstate(over="ignore", invalid="ignore"):
            for layer, cnd in zip(self.layers, self.conditioned):
                inp = np.hstack([h, cond]) if cnd else h
                pre = inp @ layer.effective_weights() + layer.biases
                h = _activate(layer.activation, pre)
                inputs.append(inp)
                pres.append(pre)
                outs.append(h)
        if not np.all(np.isfinite(h)):
            raise NumericOverflowError("non-finite values in layer stack output")
        tape = Tape(id(self), self.version, inputs, pres, outs, self.in_dim, self.cond_dim)
        return h, tape

    def __call__(self, x, cond=None) -> np.ndarray:
        return self.forward(x, cond)[0]

    def backward(self, tape: Tape, grad_out) -> tuple[list[np.ndarray], np.ndarray, np.ndarray | None]:
        """Return (parameter grads, grad wrt input, grad wrt condition)."""
        if tape.stack_id != id(self) or tape.version != self.version:
            raise StaleTapeError("tape does not belong to the current parameters of this stack")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.shape != tape.outputs[-1].shape:
            raise DimensionError(f"grad shape {g.shape} != output shape {tape.outputs[-1].shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))  # type: ignore[list-item]
        g_cond = np.zeros((g.shape[0], self.cond_dim)) if self.cond_dim else None
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            gpre = g * _activation_grad(layer.activation, tape.pre[i], tape.outputs[i])
            gw = tape.inputs[i].T @ gpre
            if layer.mask is not None:
                gw *= layer.mask
            grads[2 * i] = gw
            grads[2 * i + 1] = gpre.sum(axis=0)
            g_in = gpre @ layer.effective_weights().T
            if self.conditioned[i]:
                g_cond += g_in[:, -self.cond_dim:]
                g_in = g_in[:, :-self.cond_dim]
            g = g_in
        return grads, g, g_cond

    def copy(self) -> "LayerStack":
        return copy.deepcopy(self)


@dataclass
class Adam:
    """Adam with bias correction; moment buffers are created on first use."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if len(params) != len(grads):
            raise DimensionError("params and grads differ in length")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif len(self.m) != len(params):
            raise DimensionError("optimizer state does not match parameter list")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or m.shape != p.shape:
                raise DimensionError(f"shape mismatch: param {p.shape}, grad {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


@dataclass
class TrainingConfig:
    lr: float
    batch_size: int = 512
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_sequence(self) -> list[float]:
        """Running minimum of validation loss: the checkpoint sequence."""
        return list(np.minimum.accumulate(self.val_loss)) if self.val_loss else []


def train_loop(params: list[np.ndarray], loss_and_grad: Callable, val_loss: Callable,
               train_arrays: Sequence[np.ndarray], cfg: TrainingConfig,
               on_update: Callable[[], None] = lambda: None) -> History:
    """Minibatch Adam with early stopping; restores the best-validation parameters.

    ``loss_and_grad(*batch)`` returns ``(loss, grads)`` aligned with ``params``;
    ``val_loss()`` returns the current validation loss.
    """
    n = len(train_arrays[0])
    if n < cfg.batch_size:
        raise DataSizeError(f"{n} training records is fewer than batch size {cfg.batch_size}")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.lr)
    hist = History()
    if cfg.max_epochs <= 0:
        return hist
    best = [p.copy() for p in params]
    best_val = np.inf
    stale = 0
    n_batches = n // cfg.batch_size
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            loss, grads = loss_and_grad(*(a[idx] for a in train_arrays))
            opt.step(params, grads)
            on_update()
            total += loss
        hist.train_loss.append(total / n_batches)
        vl = float(val_loss())
        hist.val_loss.append(vl)
        if vl < best_val:
            best_val = vl
            hist.best_epoch = epoch
            best = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("early stop at epoch %d (best %d, val %.6g)", epoch, hist.best_epoch, best_val)
                break
    for p, b in zip(params, best):
        p[...] = b
    on_update()
    return hist
