"""Per-condition-bin Gaussian KDE over flow-latent vectors.

Sampling from a bin's KDE keeps generated latents inside the region the
training data actually occupied at those conditions, instead of drawing
from the full-width base Gaussian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_MIN_OCCUPANCY = 50
DEFAULT_BANDWIDTH_FLOOR = 1e-3


@dataclass
class BinGrid:
    """Per-axis bin edges; bins are [lo, hi) except the last, which is closed."""

    edges: list[np.ndarray]

    def __post_init__(self):
        self.edges = [np.asarray(e, dtype=np.float64) for e in self.edges]
        for j, e in enumerate(self.edges):
            if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
                raise ConfigurationError(f"bin edges for axis {j} must be strictly increasing (>= 2 edges)")

    @classmethod
    def from_widths(cls, conditions, widths) -> "BinGrid":
        """Cover the observed range of each condition axis with fixed-width bins."""
        k = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
        widths = np.broadcast_to(np.asarray(widths, dtype=np.float64), (k.shape[1],))
        edges = []
        for j, w in enumerate(widths):
            if w <= 0:
                raise ConfigurationError(f"bin width for axis {j} must be positive")
            lo, hi = k[:, j].min(), k[:, j].max()
            n = max(1, int(np.ceil((hi - lo) / w - 1e-9)))
            e = lo + w * np.arange(n + 1)
            e[-1] = max(e[-1], hi)
            edges.append(e)
        return cls(edges)

    @property
    def n_axes(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(e.size - 1 for e in self.edges)

    def locate(self, k) -> tuple[tuple[int, ...] | None, np.ndarray]:
        """Bin index of a single condition vector, or ``None`` when outside the grid.

        Also returns the position in fractional bin units, used to measure
        distances to other bins.
        """
        k = np.asarray(k, dtype=np.float64).ravel()
        if k.size != self.n_axes:
            raise DimensionError(f"grid has {self.n_axes} axes, got condition of length {k.size}")
        idx, pos = [], []
        inside = True
        for v, e in zip(k, self.edges):
            nb = e.size - 1
            i = int(np.searchsorted(e, v, side="right")) - 1
            if v == e[-1]:
                i = nb - 1
            if i < 0 or i >= nb:
                inside = False
            i_c = min(max(i, 0), nb - 1)
            width = e[i_c + 1] - e[i_c]
            pos.append(i_c + (v - e[i_c]) / width)
            idx.append(i)
        return (tuple(idx) if inside else None), np.array(pos)

    def locate_many(self, conditions) -> list[tuple[int, ...] | None]:
        return [self.locate(row)[0] for row in np.atleast_2d(conditions)]


@dataclass
class KdeBin:
    points: np.ndarray
    bandwidth: np.ndarray
    sparse: bool

    @property
    def count(self) -> int:
        return len(self.points)


def scott_bandwidth(points: np.ndarray, floor: float = DEFAULT_BANDWIDTH_FLOOR) -> np.ndarray:
    """Per-dimension Scott factor ``n**(-1/(d+4)) * std``, floored."""
    n, d = points.shape
    sd = points.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    return np.maximum(n ** (-1.0 / (d + 4)) * sd, floor)


@dataclass
class BinnedKde:
    grid: BinGrid
    bins: dict[tuple[int, ...], KdeBin]
    min_occupancy: int = DEFAULT_MIN_OCCUPANCY
    bandwidth_floor: float = DEFAULT_BANDWIDTH_FLOOR
    variance_preserving: bool = True

    @property
    def dim(self) -> int:
        return next(iter(self.bins.values())).points.shape[1]

    @classmethod
    def from_latents(cls, latents, conditions, grid: BinGrid,
                     min_occupancy: int = DEFAULT_MIN_OCCUPANCY,
                     bandwidth_floor: float = DEFAULT_BANDWIDTH_FLOOR,
                     require_dense: bool = True, variance_preserving: bool = True) -> "BinnedKde":
        z = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        keys = grid.locate_many(conditions)
        if any(key is None for key in keys):
            raise ConfigurationError("training conditions fall outside the bin grid")
        groups: dict[tuple[int, ...], list[int]] = {}
        for i, key in enumerate(keys):
            groups.setdefault(key, []).append(i)
        bins = {}
        for key in sorted(groups):
            pts = z[groups[key]]
            bins[key] = KdeBin(pts, scott_bandwidth(pts, bandwidth_floor), len(pts) < min_occupancy)
        kde = cls(grid, bins, min_occupancy, bandwidth_floor, variance_preserving)
        if require_dense and all(b.sparse for b in bins.values()):
            raise ConfigurationError(
                f"every bin holds fewer than {min_occupancy} points; the grid is too fine"
            )
        return kde

    def resolve(self, k) -> tuple[tuple[int, ...], bool]:
        """Bin to sample for condition ``k``; the flag is set when falling back."""
        key, pos = self.grid.locate(k)
        if key is not None and key in self.bins and not self.bins[key].sparse:
            return key, False
        dense = [b for b in self.bins if not self.bins[b].sparse]
        if not dense:
            raise ConfigurationError("KDE has no non-sparse bins")
        centers = np.array(dense, dtype=np.float64) + 0.5
        best = dense[int(np.argmin(np.sum((centers - pos) ** 2, axis=1)))]
        logger.warning("condition %s maps to a sparse or empty bin; borrowing bin %s", np.ravel(k), best)
        return best, True

    def draw(self, k, m: int, seed=None) -> tuple[np.ndarray, bool]:
        """``m`` latents from the bin of ``k``: a uniformly chosen stored point plus Gaussian jitter.

        With ``variance_preserving`` the jittered draw is shrunk towards the
        bin mean by ``1/sqrt(1 + h**2/s**2)`` per dimension, so the sample
        keeps the bin's covariance instead of inflating it by the kernel.
        """
        if not self.bins:
            raise ConfigurationError("empty KDE")
        if m < 1:
            raise ValueError("m must be >= 1")
        key, fallback = self.resolve(k)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        b = self.bins[key]
        pick = rng.integers(0, b.count, size=m)
        out = b.points[pick] + rng.standard_normal((m, b.points.shape[1])) * b.bandwidth
        if self.variance_preserving and b.count > 1:
            mu = b.points.mean(axis=0)
            var = b.points.var(axis=0, ddof=1)
            shrink = np.where(var > 0, 1.0 / np.sqrt(1.0 + b.bandwidth ** 2 / np.where(var > 0, var, 1.0)), 1.0)
            cols = shrink != 1.0
            out[:, cols] = mu[cols] + (out[:, cols] - mu[cols]) * shrink[cols]
        return out, fallback


def build(flow, augmented, conditions, grid: BinGrid, scaled_conditions=None,
          min_occupancy: int = DEFAULT_MIN_OCCUPANCY,
          bandwidth_floor: float = DEFAULT_BANDWIDTH_FLOOR,
          variance_preserving: bool = True) -> BinnedKde:
    """Invert training vectors through the flow and bin the latents by raw conditions.

    ``scaled_conditions`` is what the flow is conditioned on; binning always
    uses the raw ``conditions``.
    """
    fk = conditions if scaled_conditions is None else scaled_conditions
    latents = flow.inverse(augmented, fk)
    return BinnedKde.from_latents(latents, conditions, grid, min_occupancy, bandwidth_floor,
                                  variance_preserving=variance_preserving)
