"""HDBSCAN hierarchy and GLOSH outlier scores on small dense point sets.

Exact O(M^2) distances throughout; M is a reference cluster (~1500 points)
so no neighbour-search acceleration is needed. The density convention is
``lambda = 1 / distance`` with distances floored at ``DISTANCE_FLOOR``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionError, NumericInputError

logger = logging.getLogger(__name__)

DISTANCE_FLOOR = 1e-12
_warned_fallback = False
NORMALIZATIONS = ("hypersphere", "standard")


def normalize(points, mode: str = "standard", fit_rows=None) -> np.ndarray:
    """Standard-scale (statistics from ``fit_rows`` only), then optionally project to the unit sphere."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if mode not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {mode!r}")
    ref = x if fit_rows is None else x[fit_rows]
    sd = ref.std(axis=0)
    sd[sd == 0] = 1.0
    out = (x - ref.mean(axis=0)) / sd
    if mode == "hypersphere":
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        out = out / norms
    return out


def pairwise_distances(points) -> np.ndarray:
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not np.all(np.isfinite(x)):
        raise NumericInputError("points must be finite")
    return cdist(x, x)


def core_distances(points, min_samples: int, distances: np.ndarray | None = None) -> np.ndarray:
    """Distance from each point to its ``min_samples``-th nearest other point."""
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    d = pairwise_distances(points) if distances is None else distances
    m = d.shape[0]
    if m <= min_samples:
        raise DimensionError(f"need more than min_samples={min_samples} points, got {m}")
    d = d.copy()
    np.fill_diagonal(d, np.inf)
    return np.partition(d, min_samples - 1, axis=1)[:, min_samples - 1]


def mutual_reachability(points, cores, distances: np.ndarray | None = None) -> np.ndarray:
    """Dense ``max(core[a], core[b], d(a, b))`` matrix; the diagonal is not meaningful."""
    d = pairwise_distances(points) if distances is None else distances
    cores = np.asarray(cores, dtype=np.float64)
    return np.maximum(np.maximum(d, cores[:, None]), cores[None, :])


def prim_mst(weights: np.ndarray) -> np.ndarray:
    """Minimum spanning tree of a dense symmetric weight matrix.

    Returns ``(M-1, 3)`` rows ``(a, b, w)`` with ``a < b``, sorted by
    ``(w, a, b)``. Ties during growth go to the lowest vertex index.
    """
    m = weights.shape[0]
    in_tree = np.zeros(m, dtype=bool)
    best = np.full(m, np.inf)
    parent = np.full(m, -1)
    edges = np.empty((m - 1, 3))
    current = 0
    in_tree[0] = True
    for step in range(m - 1):
        row = weights[current]
        improve = (row < best) & ~in_tree
        best[improve] = row[improve]
        parent[improve] = current
        cand = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(cand))
        a, b = sorted((int(parent[nxt]), nxt))
        edges[step] = (a, b, best[nxt])
        in_tree[nxt] = True
        current = nxt
    order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2]))
    return edges[order]


def single_linkage(mst: np.ndarray, m: int) -> np.ndarray:
    """Scipy-style linkage ``(left, right, distance, size)`` from sorted MST edges."""
    parent = np.arange(2 * m - 1)
    size = np.ones(2 * m - 1, dtype=np.int64)

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    out = np.empty((m - 1, 4))
    for n, (a, b, w) in enumerate(mst):
        ra, rb = find(int(a)), find(int(b))
        new = m + n
        parent[ra] = parent[rb] = new
        size[new] = size[ra] + size[rb]
        out[n] = (ra, rb, w, size[new])
    return out


@dataclass
class CondensedTree:
    """Rows ``parent -> child`` at density ``lam``; children below ``n_points`` are points."""

    parent: np.ndarray
    child: np.ndarray
    lam: np.ndarray
    child_size: np.ndarray
    n_points: int
    min_cluster_size: int
    min_samples: int
    mst: np.ndarray = field(repr=False, default=None)
    linkage: np.ndarray = field(repr=False, default=None)

    @property
    def root(self) -> int:
        return self.n_points

    @property
    def cluster_ids(self) -> np.ndarray:
        return np.unique(np.concatenate([[self.root], self.child[self.child >= self.n_points]]))

    def point_rows(self) -> np.ndarray:
        return self.child < self.n_points

    def birth_lambdas(self) -> dict[int, float]:
        births = {self.root: 0.0}
        sel = self.child >= self.n_points
        births.update(zip(self.child[sel].tolist(), self.lam[sel].tolist()))
        return births


def condense(linkage: np.ndarray, m: int, min_cluster_size: int) -> tuple[np.ndarray, ...]:
    """Walk the dendrogram from the root, keeping only splits where both sides reach ``min_cluster_size``."""
    if m == 1:
        return (np.array([m]), np.array([0]), np.array([np.inf]), np.array([1]))
    left = linkage[:, 0].astype(np.int64)
    right = linkage[:, 1].astype(np.int64)
    dist = linkage[:, 2]
    sizes = linkage[:, 3].astype(np.int64)

    def size_of(node):
        return 1 if node < m else int(sizes[node - m])

    def leaves(node):
        out, todo = [], [node]
        while todo:
            n = todo.pop()
            if n < m:
                out.append(n)
            else:
                todo.extend((left[n - m], right[n - m]))
        return out

    rows_p, rows_c, rows_l, rows_s = [], [], [], []

    def emit(p, c, lam, s):
        rows_p.append(p)
        rows_c.append(c)
        rows_l.append(lam)
        rows_s.append(s)

    next_label = m + 1
    stack = [(2 * m - 2, m)]
    while stack:
        node, label = stack.pop()
        i = node - m
        lam = 1.0 / max(dist[i], DISTANCE_FLOOR)
        a, b = int(left[i]), int(right[i])
        sa, sb = size_of(a), size_of(b)
        if sa >= min_cluster_size and sb >= min_cluster_size:
            for c, s in ((a, sa), (b, sb)):
                emit(label, next_label, lam, s)
                stack.append((c, next_label))
                next_label += 1
        elif sa < min_cluster_size and sb < min_cluster_size:
            for c in (a, b):
                for p in leaves(c):
                    emit(label, p, lam, 1)
        else:
            small, big = (a, b) if sa < sb else (b, a)
            for p in leaves(small):
                emit(label, p, lam, 1)
            if big < m:
                emit(label, big, lam, 1)
            else:
                stack.append((big, label))
    return (np.array(rows_p, dtype=np.int64), np.array(rows_c, dtype=np.int64),
            np.array(rows_l), np.array(rows_s, dtype=np.int64))


def build_hierarchy(points, min_samples: int = 100, min_cluster_size: int = 1000) -> CondensedTree:
    """Core distances -> mutual reachability -> Prim MST -> single linkage -> condensed tree."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    m = x.shape[0]
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    if m < min_cluster_size:
        logger.warning("%d points is fewer than min_cluster_size=%d", m, min_cluster_size)
    d = pairwise_distances(x)
    cores = core_distances(x, min_samples, d)
    mst = prim_mst(mutual_reachability(x, cores, d))
    link = single_linkage(mst, m)
    p, c, lam, s = condense(link, m, min_cluster_size)
    return CondensedTree(p, c, lam, s, m, min_cluster_size, min_samples, mst, link)


def cluster_stabilities(tree: CondensedTree) -> dict[int, float]:
    births = tree.birth_lambdas()
    stab = {int(c): 0.0 for c in tree.cluster_ids}
    for p, lam, s in zip(tree.parent, tree.lam, tree.child_size):
        stab[int(p)] += (lam - births[int(p)]) * s
    return stab


def extract_clusters(tree: CondensedTree, allow_single_cluster: bool = False) -> tuple[np.ndarray, list[int]]:
    """Excess-of-mass selection. Returns per-point labels (-1 = noise) and selected cluster ids.

    Labels are 0..n_selected-1 in order of selected cluster id.
    """
    stab = cluster_stabilities(tree)
    children: dict[int, list[int]] = {}
    for p, c in zip(tree.parent, tree.child):
        if c >= tree.n_points:
            children.setdefault(int(p), []).append(int(c))
    selected = {c: True for c in stab}
    candidates = sorted(stab, reverse=True)
    if not allow_single_cluster:
        candidates = [c for c in candidates if c != tree.root]
        selected[tree.root] = False
    for c in candidates:
        kids = children.get(c, [])
        subtotal = sum(stab[k] for k in kids)
        if kids and subtotal > stab[c]:
            selected[c] = False
            stab[c] = subtotal
        else:
            todo = list(kids)
            while todo:
                k = todo.pop()
                selected[k] = False
                todo.extend(children.get(k, []))
    chosen = sorted(c for c, v in selected.items() if v)

    owner: dict[int, int] = {}
    for idx, c in enumerate(chosen):
        todo = [c]
        while todo:
            k = todo.pop()
            owner[k] = idx
            todo.extend(children.get(k, []))
    labels = np.full(tree.n_points, -1, dtype=np.int64)
    rows = tree.point_rows()
    for p, c in zip(tree.parent[rows], tree.child[rows]):
        labels[c] = owner.get(int(p), -1)
    return labels, chosen


def max_lambdas(tree: CondensedTree) -> dict[int, float]:
    """Highest density at which any member of each cluster (or its descendants) is still present."""
    best = {int(c): 0.0 for c in tree.cluster_ids}
    for p, lam in zip(tree.parent, tree.lam):
        if lam > best[int(p)]:
            best[int(p)] = lam
    cluster_rows = tree.child >= tree.n_points
    pairs = sorted(zip(tree.child[cluster_rows].tolist(), tree.parent[cluster_rows].tolist()), reverse=True)
    for c, p in pairs:
        best[p] = max(best[p], best[c])
    return best


def outlier_scores(tree: CondensedTree) -> np.ndarray:
    """GLOSH: ``1 - lambda_p / lambda_max`` of the cluster the point departs from, in [0, 1]."""
    best = max_lambdas(tree)
    scores = np.ones(tree.n_points)
    rows = tree.point_rows()
    for p, c, lam in zip(tree.parent[rows], tree.child[rows], tree.lam[rows]):
        lmax = best[int(p)]
        if lmax > 0:
            scores[c] = 1.0 - lam / lmax
    return np.clip(scores, 0.0, 1.0)


def quantile_threshold(scores, q: float) -> float:
    """Nearest-rank quantile: smallest s with ``#(scores <= s) / M >= q``."""
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("no scores")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    rank = max(1, math.ceil(q * s.size - 1e-9))
    return float(s[rank - 1])


@dataclass
class ClusterResult:
    tree: CondensedTree
    labels: np.ndarray
    scores: np.ndarray
    fallback: bool


def cluster_and_score(points, min_samples: int = 100, min_cluster_size: int = 1000) -> ClusterResult:
    """Hierarchy, extracted clusters, and GLOSH scores.

    When excess-of-mass selects nothing the whole set is treated as one
    cluster rooted at the top of the dendrogram (scores are unaffected:
    GLOSH only uses the tree).
    """
    tree = build_hierarchy(points, min_samples, min_cluster_size)
    labels, chosen = extract_clusters(tree)
    fallback = not chosen
    if fallback:
        global _warned_fallback
        if not _warned_fallback:
            logger.warning("no cluster extracted (min_cluster_size=%d, %d points); "
                           "treating the whole set as one cluster", min_cluster_size, tree.n_points)
            _warned_fallback = True
        labels = np.zeros(tree.n_points, dtype=np.int64)
    return ClusterResult(tree, labels, outlier_scores(tree), fallback)
