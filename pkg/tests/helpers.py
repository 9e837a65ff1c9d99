"""Shared oracles for the test suite."""

import math

import numpy as np


def central_diff(f, params, eps=1e-5):
    """Central finite-difference gradient of scalar ``f()`` wrt each array in ``params`` (perturbed in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f()
            flat[i] = old - eps
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def rel_error(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def kruskal_weights(w):
    """Exhaustive Kruskal over all pairs of a dense symmetric matrix; returns the sorted edge weights."""
    m = len(w)
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    edges = sorted((w[a, b], a, b) for a in range(m) for b in range(a + 1, m))
    chosen = []
    for wt, a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append(wt)
    return np.sort(np.array(chosen))


def brute_core(points, k):
    """k-th nearest other point by explicit sort per row."""
    m = len(points)
    out = np.empty(m)
    for i in range(m):
        d = sorted(math.sqrt(sum((a - b) ** 2 for a, b in zip(points[i], points[j])))
                   for j in range(m) if j != i)
        out[i] = d[k - 1]
    return out


def blobs(rng, n=200, d=2, sep=20.0, sigma=1.0):
    a = rng.normal(0.0, sigma, size=(n, d))
    b = rng.normal(0.0, sigma, size=(n, d))
    b[:, 0] += sep * sigma
    return np.vstack([a, b])
