"""Conditional masked autoregressive flow (MAF) over the augmented space.

Each bijection is a MADE network that maps ``(x_<i, k)`` to a shift ``mu_i``
and log-scale ``alpha_i``. The density direction
``u_i = (x_i - mu_i) * exp(-alpha_i)`` needs a single network pass; the
generative direction ``x_i = u_i * exp(alpha_i) + mu_i`` needs one pass per
dimension. A fixed permutation precedes every block in the density
direction (identity for the first block, reversal afterwards).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import History, LayerStack, TrainingConfig, train_loop
from .errors import DimensionError, NumericInputError, NumericOverflowError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def made_degrees(dim: int, hidden: tuple[int, ...]) -> list[np.ndarray]:
    """Input degrees 1..D, hidden degrees cycling through 0..D-1.

    Degree-0 hidden units see only the conditions, so the first output is
    still a function of ``k``.
    """
    degrees = [np.arange(1, dim + 1)]
    for h in hidden:
        degrees.append(np.arange(h) % dim)
    return degrees


def made_masks(dim: int, cond_dim: int, hidden: tuple[int, ...]) -> list[np.ndarray]:
    deg = made_degrees(dim, hidden)
    masks = []
    for prev, cur in zip(deg[:-1], deg[1:]):
        m = (prev[:, None] <= cur[None, :]).astype(np.float64)
        masks.append(np.vstack([m, np.ones((cond_dim, len(cur)))]))
    out = (deg[-1][:, None] < deg[0][None, :]).astype(np.float64)
    masks.append(np.hstack([out, out]))
    return masks


@dataclass
class _BlockCache:
    x: np.ndarray
    u: np.ndarray
    alpha: np.ndarray
    free: np.ndarray
    tape: object


class MadeBlock:
    """One affine autoregressive bijection with unmasked condition inputs."""

    def __init__(self, net: LayerStack, alpha_clamp: float = 7.0):
        self.net = net
        self.dim = net.out_dim // 2
        self.alpha_clamp = alpha_clamp

    @classmethod
    def build(cls, dim: int, cond_dim: int, hidden: tuple[int, ...], rng: np.random.Generator,
              activation: str = "tanh", alpha_clamp: float = 7.0, out_scale: float = 1.0) -> "MadeBlock":
        sizes = [dim, *hidden, 2 * dim]
        acts = [activation] * len(hidden) + ["linear"]
        conditioned = [True] * len(hidden) + [False]
        masks = made_masks(dim, cond_dim, tuple(hidden))
        net = LayerStack.build(sizes, acts, rng, cond_dim, conditioned, masks, out_scale)
        return cls(net, alpha_clamp)

    def _shift_logscale(self, x, k):
        out, tape = self.net.forward(x, k)
        mu = out[:, :self.dim]
        raw = out[:, self.dim:]
        alpha = np.clip(raw, -self.alpha_clamp, self.alpha_clamp)
        free = np.abs(raw) < self.alpha_clamp
        return mu, alpha, free, tape

    def inverse(self, x, k, keep: bool = False):
        """Density direction ``x -> u``; returns ``(u, log|det du/dx|)``."""
        mu, alpha, free, tape = self._shift_logscale(x, k)
        with np.errstate(over="ignore", invalid="ignore"):
            u = (x - mu) * np.exp(-alpha)
        logdet = -alpha.sum(axis=1)
        if keep:
            return u, logdet, _BlockCache(x, u, alpha, free, tape)
        return u, logdet

    def forward(self, u, k):
        """Generative direction ``u -> x``, one network pass per dimension."""
        x = np.zeros_like(u)
        for i in range(self.dim):
            mu, alpha, _, _ = self._shift_logscale(x, k)
            with np.errstate(over="ignore", invalid="ignore"):
                x[:, i] = u[:, i] * np.exp(alpha[:, i]) + mu[:, i]
        return x

    def backward(self, cache: _BlockCache, gu: np.ndarray, glogdet: np.ndarray):
        """Gradients given dL/du and dL/dlogdet (per row)."""
        e = np.exp(-cache.alpha)
        gmu = -gu * e
        galpha = (-gu * cache.u - glogdet[:, None]) * cache.free
        grads, gx_net, _ = self.net.backward(cache.tape, np.hstack([gmu, galpha]))
        return grads, gu * e + gx_net


@dataclass
class FlowConfig:
    bijections: int = 12
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "tanh"
    lr: float = 1e-4
    batch_size: int = 512
    max_epochs: int = 200
    patience: int = 20
    alpha_clamp: float = 7.0
    init_scale: float = 0.1
    val_fraction: float = 0.1
    seed: int = 0


def reverse_permutation(dim: int) -> np.ndarray:
    return np.arange(dim)[::-1].copy()


@dataclass
class FlowModel:
    blocks: list[MadeBlock]
    permutations: list[np.ndarray]
    history: History = field(default_factory=History)

    @property
    def dim(self) -> int:
        return self.blocks[0].dim

    @property
    def cond_dim(self) -> int:
        return self.blocks[0].net.cond_dim

    @property
    def params(self) -> list[np.ndarray]:
        return [p for b in self.blocks for p in b.net.params]

    @property
    def n_params(self) -> int:
        return sum(b.net.n_params for b in self.blocks)

    def touch(self) -> None:
        for b in self.blocks:
            b.net.touch()

    def _check(self, x, k):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = np.atleast_2d(np.asarray(k, dtype=np.float64))
        if k.shape[0] == 1 and x.shape[0] > 1:
            k = np.repeat(k, x.shape[0], axis=0)
        if x.shape[1] != self.dim or k.shape != (x.shape[0], self.cond_dim):
            raise DimensionError(
                f"flow expects ({self.dim}) data dims and ({self.cond_dim}) conditions, got {x.shape}, {k.shape}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(k))):
            raise NumericInputError("non-finite input to the flow")
        return x, k

    def inverse(self, x, k, return_logdet: bool = False):
        """Map data to the Gaussian base space."""
        h, k = self._check(x, k)
        total = np.zeros(h.shape[0])
        for j, (block, perm) in enumerate(zip(self.blocks, self.permutations)):
            h, ld = block.inverse(h[:, perm], k)
            if not np.all(np.isfinite(h)):
                raise NumericOverflowError(f"non-finite latent after bijection {j}")
            total += ld
        return (h, total) if return_logdet else h

    def log_prob(self, x, k) -> np.ndarray:
        z, logdet = self.inverse(x, k, return_logdet=True)
        return -0.5 * np.sum(z * z, axis=1) - 0.5 * self.dim * LOG_2PI + logdet

    def sample(self, z, k) -> np.ndarray:
        """Push base-space vectors through the generative direction."""
        h, k = self._check(z, k)
        for j in range(len(self.blocks) - 1, -1, -1):
            h = self.blocks[j].forward(h, k)
            perm = self.permutations[j]
            out = np.empty_like(h)
            out[:, perm] = h
            h = out
            if not np.all(np.isfinite(h)):
                raise NumericOverflowError(f"non-finite sample after bijection {j}")
        return h

    def nll_loss_and_grad(self, x, k):
        """Mean negative log-likelihood and gradients aligned with :attr:`params`."""
        h, k = self._check(x, k)
        n = h.shape[0]
        if n == 0:
            raise DimensionError("empty batch")
        caches = []
        logdet = np.zeros(n)
        for block, perm in zip(self.blocks, self.permutations):
            h, ld, cache = block.inverse(h[:, perm], k, keep=True)
            caches.append(cache)
            logdet += ld
        logp = -0.5 * np.sum(h * h, axis=1) - 0.5 * self.dim * LOG_2PI + logdet
        loss = -float(logp.mean())
        if not np.isfinite(loss):
            raise NumericOverflowError("non-finite flow loss")
        g = h / n
        gl = np.full(n, -1.0 / n)
        grads_by_block = []
        for j in range(len(self.blocks) - 1, -1, -1):
            grads, gx = self.blocks[j].backward(caches[j], g, gl)
            grads_by_block.append(grads)
            perm = self.permutations[j]
            g = np.empty_like(gx)
            g[:, perm] = gx
        grads_by_block.reverse()
        return loss, [gp for gs in grads_by_block for gp in gs]


def init_flow(dim: int, cond_dim: int, config: FlowConfig) -> FlowModel:
    rng = np.random.default_rng(config.seed)
    blocks, perms = [], []
    for j in range(config.bijections):
        blocks.append(MadeBlock.build(dim, cond_dim, tuple(config.hidden), rng, config.activation,
                                      config.alpha_clamp, config.init_scale))
        perms.append(np.arange(dim) if j == 0 else reverse_permutation(dim))
    return FlowModel(blocks, perms)


def train_flow(data, conditions, config: FlowConfig | None = None,
               val_data=None, val_conditions=None) -> FlowModel:
    """Maximum-likelihood training; ``conditions`` must already be scaled."""
    config = config or FlowConfig()
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    k = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    if val_data is None:
        order = np.random.default_rng(config.seed + 1).permutation(len(x))
        n_val = max(1, int(round(config.val_fraction * len(x))))
        vi, ti = order[:n_val], order[n_val:]
        xv, kv, x, k = x[vi], k[vi], x[ti], k[ti]
    else:
        xv = np.atleast_2d(np.asarray(val_data, dtype=np.float64))
        kv = np.atleast_2d(np.asarray(val_conditions, dtype=np.float64))
    model = init_flow(x.shape[1], k.shape[1], config)
    tc = TrainingConfig(config.lr, config.batch_size, config.max_epochs, config.patience, config.seed)
    model.history = train_loop(
        model.params, model.nll_loss_and_grad,
        lambda: -float(np.mean(model.log_prob(xv, kv))),
        (x, k), tc, model.touch,
    )
    return model
