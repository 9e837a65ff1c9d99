"""Seeded synthetic reference/anomaly tables and the feature perturbation map.

Reference features are affine in the conditions plus correlated noise::

    x = offset + slopes @ k + loadings @ s + sigma * eps,   s, eps ~ N(0, I)

Anomalies either shift that mean by ``displacement`` pooled standard
deviations on every feature, or keep the exact reference marginals while
drawing their features at an independent condition vector (``decorrelate``),
which breaks the feature/condition relationship only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError

logger = logging.getLogger(__name__)


def _default_offsets(n):
    return np.linspace(-1.0, 1.0, n)


@dataclass
class SynthSpec:
    n_features: int = 6
    n_conditions: int = 2
    condition_ranges: tuple[tuple[float, float], ...] | None = None
    slopes: np.ndarray | None = None
    offsets: np.ndarray | None = None
    loadings: np.ndarray | None = None
    n_factors: int = 2
    sigma: float = 0.05
    displacement: float = 0.0
    decorrelate: bool = False
    n_train: int = 20000
    n_val: int = 2000
    n_test: int = 2000
    seed: int = 0

    def __post_init__(self):
        n, l = self.n_features, self.n_conditions
        if n < 1 or l < 1:
            raise ConfigurationError("need at least one feature and one condition")
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise ConfigurationError("split counts must be positive")
        if self.sigma < 0:
            raise ConfigurationError("sigma must be non-negative")
        if self.condition_ranges is None:
            self.condition_ranges = tuple((0.0, 1.0) for _ in range(l))
        if len(self.condition_ranges) != l or any(lo >= hi for lo, hi in self.condition_ranges):
            raise ConfigurationError(f"invalid condition ranges {self.condition_ranges}")
        # Structural constants come from a fixed stream so that they do not
        # depend on the sampling seed.
        const = np.random.default_rng(12345 + 31 * n + l)
        if self.slopes is None:
            self.slopes = const.choice([-1.0, 1.0], size=(n, l)) * const.uniform(1.0, 2.0, size=(n, l))
        if self.offsets is None:
            self.offsets = _default_offsets(n)
        if self.loadings is None:
            self.loadings = const.normal(0.0, 0.3, size=(n, self.n_factors))
        self.slopes = np.asarray(self.slopes, dtype=np.float64).reshape(n, l)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(n)
        self.loadings = np.asarray(self.loadings, dtype=np.float64).reshape(n, -1)

    @property
    def feature_sd(self) -> np.ndarray:
        """Per-feature standard deviation at fixed conditions."""
        return np.sqrt(np.sum(self.loadings ** 2, axis=1) + self.sigma ** 2)

    @property
    def pooled_sd(self) -> float:
        return float(np.sqrt(np.mean(self.feature_sd ** 2)))

    def conditional_mean(self, k) -> np.ndarray:
        k = np.atleast_2d(np.asarray(k, dtype=np.float64))
        return self.offsets + self._unit(k) @ self.slopes.T

    def _unit(self, k):
        lo = np.array([r[0] for r in self.condition_ranges])
        hi = np.array([r[1] for r in self.condition_ranges])
        return (k - lo) / (hi - lo)

    def draw_conditions(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([r[0] for r in self.condition_ranges])
        hi = np.array([r[1] for r in self.condition_ranges])
        return lo + (hi - lo) * rng.uniform(size=(n, self.n_conditions))

    def draw_reference(self, k, rng: np.random.Generator) -> np.ndarray:
        k = np.atleast_2d(k)
        s = rng.standard_normal((len(k), self.loadings.shape[1]))
        eps = rng.standard_normal((len(k), self.n_features))
        return self.conditional_mean(k) + s @ self.loadings.T + self.sigma * eps

    def draw_anomaly(self, k, rng: np.random.Generator) -> np.ndarray:
        k = np.atleast_2d(k)
        source_k = self.draw_conditions(len(k), rng) if self.decorrelate else k
        x = self.draw_reference(source_k, rng)
        return x + self.displacement * self.pooled_sd


def generate(spec: SynthSpec) -> dict[str, Dataset]:
    """``train``/``val`` (reference only) and ``test`` (reference then anomalies, labelled)."""
    seeds = np.random.SeedSequence(spec.seed).spawn(4)
    out = {}
    for name, ss, n in (("train", seeds[0], spec.n_train), ("val", seeds[1], spec.n_val)):
        rng = np.random.default_rng(ss)
        k = spec.draw_conditions(n, rng)
        out[name] = Dataset(spec.draw_reference(k, rng), k, np.array(["ref"] * n, dtype=object),
                            np.array([f"{name}-{i}" for i in range(n)], dtype=object))
    rng_r = np.random.default_rng(seeds[2])
    rng_a = np.random.default_rng(seeds[3])
    kr = spec.draw_conditions(spec.n_test, rng_r)
    ka = spec.draw_conditions(spec.n_test, rng_a)
    xr = spec.draw_reference(kr, rng_r)
    xa = spec.draw_anomaly(ka, rng_a)
    n = spec.n_test
    out["test"] = Dataset(
        np.vstack([xr, xa]), np.vstack([kr, ka]),
        np.array(["ref"] * n + ["anom"] * n, dtype=object),
        np.array([f"test-ref-{i}" for i in range(n)] + [f"test-anom-{i}" for i in range(n)], dtype=object),
    )
    return out


def perturb(x, xmin, xmax, sign: float = 1.0, p: float = 0.1):
    """``x + S*p*(x - xmin)*(xmax - x)/(xmax - xmin)**2``; the range ends are fixed points.

    Values outside ``[xmin, xmax]`` are clamped first (with a warning).
    Works elementwise; ``xmin``/``xmax`` broadcast per column.
    """
    x = np.asarray(x, dtype=np.float64)
    xmin = np.asarray(xmin, dtype=np.float64)
    xmax = np.asarray(xmax, dtype=np.float64)
    if np.any(xmin >= xmax):
        raise ValueError("xmin must be below xmax")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    outside = (x < xmin) | (x > xmax)
    if np.any(outside):
        logger.warning("perturb: %d values outside [xmin, xmax] clamped", int(np.sum(outside)))
        x = np.clip(x, xmin, xmax)
    span = xmax - xmin
    out = x + sign * p * (x - xmin) * (xmax - x) / span ** 2
    return out if out.ndim else float(out)
