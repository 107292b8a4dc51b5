"""Pure-numpy implementations of the hot kernels.

These are the reference semantics for the compiled twin in
``_fastkernels.pyx``; both must produce bitwise-identical results.
Accumulation orders are therefore kept explicit (loop over coordinates
in index order) rather than delegated to BLAS.
"""

import numpy as np

BACKEND = "numpy"


def chebyshev_distances(a):
    """Dense pairwise max-norm distance matrix of the rows of ``a``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    n = a.shape[0]
    out = np.zeros((n, n))
    for d in range(a.shape[1]):
        col = a[:, d]
        np.maximum(out, np.abs(col[:, None] - col[None, :]), out=out)
    return out


def sq_euclidean_distances(a):
    """Dense pairwise squared-euclidean distances, coordinate-wise sums."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    n = a.shape[0]
    out = np.zeros((n, n))
    for d in range(a.shape[1]):
        col = a[:, d]
        diff = col[:, None] - col[None, :]
        out += diff * diff
    return out


def brute_knn(a, k, chebyshev=False):
    """Indices of the k nearest distinct rows for every row of ``a``.

    Ties are broken by the smaller row index. Rows of the result are
    ordered by (distance, index).
    """
    d = chebyshev_distances(a) if chebyshev else sq_euclidean_distances(a)
    np.fill_diagonal(d, np.inf)
    # stable argsort keeps the ascending index order within ties
    return np.argsort(d, axis=1, kind="stable")[:, :k].astype(np.int64)


def cmi_counts_conditional(d_xz, d_z, d_y, perm, k):
    """Neighborhood counts for the conditional information estimator.

    ``d_y`` is the pairwise outcome distance matrix in original row
    order; ``perm`` maps positions to donor rows so permuted samples
    reuse the same matrix. For each row the k-th smallest joint distance
    (over the other rows) sets the radius; counts are the number of
    other rows strictly inside it in each marginal space.
    """
    perm = np.asarray(perm, dtype=np.int64)
    dyp = d_y[np.ix_(perm, perm)]
    joint = np.maximum(d_xz, dyp)
    np.fill_diagonal(joint, np.inf)
    eps = np.partition(joint, k - 1, axis=1)[:, k - 1]
    col = eps[:, None]
    has_self = (eps > 0).astype(np.int64)  # diagonal distances are 0
    kz = (d_z < col).sum(axis=1) - has_self
    kxz = (d_xz < col).sum(axis=1) - has_self
    kyz = (np.maximum(d_z, dyp) < col).sum(axis=1) - has_self
    return kz.astype(np.int64), kxz.astype(np.int64), kyz.astype(np.int64)


def cmi_counts_unconditional(d_x, d_y, perm, k):
    """Marginal neighborhood counts for the unconditional estimator."""
    perm = np.asarray(perm, dtype=np.int64)
    dyp = d_y[np.ix_(perm, perm)]
    joint = np.maximum(d_x, dyp)
    np.fill_diagonal(joint, np.inf)
    eps = np.partition(joint, k - 1, axis=1)[:, k - 1]
    col = eps[:, None]
    has_self = (eps > 0).astype(np.int64)
    kx = (d_x < col).sum(axis=1) - has_self
    ky = (dyp < col).sum(axis=1) - has_self
    return kx.astype(np.int64), ky.astype(np.int64)


def restricted_permutation(neighbors, order, u):
    """Donor map for the local permutation scheme.

    Positions are visited in ``order``; each picks uniformly (driven by
    the pre-drawn uniforms ``u``) among its not-yet-used candidate
    donors, falling back to a with-replacement draw when all are used.
    """
    neighbors = np.asarray(neighbors, dtype=np.int64)
    order = np.asarray(order, dtype=np.int64)
    n, c = neighbors.shape
    used = np.zeros(n, dtype=bool)
    donor = np.empty(n, dtype=np.int64)
    for t in range(n):
        i = order[t]
        cands = neighbors[i]
        free = cands[~used[cands]]
        if free.size:
            pick = free[min(int(u[t] * free.size), free.size - 1)]
        else:
            pick = cands[min(int(u[t] * c), c - 1)]
        donor[i] = pick
        used[pick] = True
    return donor
