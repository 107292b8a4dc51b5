"""Gaussian kernel evaluations, bandwidth selection, random Fourier
features and knn graph construction shared by the kernel-based tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.spatial import cKDTree

from dncit import _core
from dncit.errors import DimMismatch, KTooLarge

EUCLIDEAN = "euclidean"
CHEBYSHEV = "chebyshev"

# spatial-tree pruning degrades in high dimension; fall back to brute force
TREE_MAX_DIM = 20


@dataclass(frozen=True)
class RffBasis:
    """Frequency/phase draws defining a random Fourier feature map."""

    w: np.ndarray  # d x m frequency draws
    b: np.ndarray  # m phases in [0, 2pi)
    sigma: float
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.w.shape[1] != self.m or self.b.shape != (self.m,):
            raise DimMismatch("basis shapes inconsistent with m")
        if np.any(self.b < 0) or np.any(self.b >= 2 * np.pi):
            raise ValueError("phases must lie in [0, 2pi)")


@dataclass(frozen=True)
class KnnGraph:
    """k-nearest-neighbor graph with per-node sorted index lists."""

    neighbor_lists: tuple
    degrees: np.ndarray
    k: int
    metric: str


def gaussian_kernel(u, v, sigma):
    """exp(-||u - v||^2 / (2 sigma^2)) for equal-length vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimMismatch(f"vector lengths differ: {u.shape[0]} vs {v.shape[0]}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = u - v
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma**2)))


def gaussian_gram(m, sigma):
    """Dense Gaussian kernel matrix of the rows of ``m``."""
    d2 = _core.sq_euclidean_distances(np.asarray(m, dtype=np.float64))
    return np.exp(-d2 / (2.0 * sigma**2))


def median_heuristic(m, cap=500):
    """Median pairwise euclidean distance over the first ``cap`` rows.

    A zero median (duplicate-heavy data) falls back to the smallest
    positive pairwise distance, and 1 when every distance is zero.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.shape[0] < 2:
        raise ValueError("median_heuristic needs at least 2 rows")
    head = m[: min(m.shape[0], int(cap))]
    dists = pdist(head)
    med = float(np.median(dists))
    if med > 0:
        return med
    positive = dists[dists > 0]
    if positive.size:
        return float(positive.min())
    return 1.0


def sample_rff(d, m, sigma, seed):
    """Draw a random Fourier basis for the Gaussian kernel.

    Frequencies are N(0, sigma^-2) per coordinate so that the feature
    inner product /m approximates exp(-||x-y||^2 / (2 sigma^2)).
    """
    if d < 1 or m < 1:
        raise ValueError("d and m must be >= 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0 / sigma, size=(d, m))
    b = rng.uniform(0.0, 2.0 * np.pi, size=m)
    b = np.where(b >= 2 * np.pi, 0.0, b)  # guard the half-open interval
    return RffBasis(w=w, b=b, sigma=float(sigma), m=int(m))


def rff_features(basis: RffBasis, m):
    """Feature matrix with entries sqrt(2) cos(w_j . x_i + b_j)."""
    x = np.asarray(m, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[1] != basis.w.shape[0]:
        raise DimMismatch(f"data dim {x.shape[1]} does not match basis dim {basis.w.shape[0]}")
    return np.sqrt(2.0) * np.cos(x @ basis.w + basis.b)


def _tree_knn(m, k, metric):
    """Tree-accelerated neighbor search, refined to the brute-force
    (distance, index) ordering; falls back per row when a tie could be
    truncated by the candidate set."""
    n = m.shape[0]
    p = np.inf if metric == CHEBYSHEV else 2
    slack = min(n, k + 9)  # +1 for self, +8 headroom for boundary ties
    tree = cKDTree(m)
    _, cand = tree.query(m, k=slack, p=p)
    cand = np.atleast_2d(cand)
    out = np.empty((n, k), dtype=np.int64)
    exact = _core.chebyshev_distances if metric == CHEBYSHEV else _core.sq_euclidean_distances
    brute_rows = []
    for i in range(n):
        idx = cand[i][cand[i] != i]
        sub = m[np.concatenate(([i], idx))]
        drow = exact(sub)[0, 1:]
        order = np.argsort(drow, kind="stable")
        ranked = idx[order]
        # candidate indices are not globally index-sorted; re-break ties exactly
        dsorted = drow[order]
        ranked = _retie(ranked, dsorted)
        if k < len(ranked) and dsorted[k - 1] == dsorted[-1]:
            brute_rows.append(i)  # tie may extend past the candidate set
            continue
        out[i] = ranked[:k]
    if brute_rows:
        full = _core.brute_knn(m, k, chebyshev=metric == CHEBYSHEV)
        for i in brute_rows:
            out[i] = full[i]
    return out


def _retie(indices, dists):
    """Reorder equal-distance runs by ascending index."""
    out = indices.copy()
    start = 0
    for stop in range(1, len(dists) + 1):
        if stop == len(dists) or dists[stop] != dists[start]:
            if stop - start > 1:
                out[start:stop] = np.sort(out[start:stop])
            start = stop
    return out


def build_knn_graph(m, k, metric=EUCLIDEAN):
    """knn graph under the given metric with ties broken by row index.

    Uses a spatial tree up to ``TREE_MAX_DIM`` input dimensions and
    brute force beyond; both paths agree exactly.
    """
    m = np.ascontiguousarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    n, d = m.shape
    if metric not in (EUCLIDEAN, CHEBYSHEV):
        raise ValueError(f"unknown metric {metric!r}")
    if not 1 <= k <= n - 1:
        raise KTooLarge(f"k={k} outside [1, {n - 1}]")
    if d <= TREE_MAX_DIM and n > 64:
        idx = _tree_knn(m, k, metric)
    else:
        idx = _core.brute_knn(m, k, chebyshev=metric == CHEBYSHEV)
    lists = tuple(np.sort(row) for row in idx)
    degrees = np.full(n, k, dtype=np.int64)
    return KnnGraph(neighbor_lists=lists, degrees=degrees, k=k, metric=metric)


def neighbor_index_matrix(graph: KnnGraph):
    """(n, k) int matrix view of the neighbor lists."""
    return np.vstack(graph.neighbor_lists)
