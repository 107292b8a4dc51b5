"""Parametric baseline: joint F test for all feature columns in a
linear regression of Y on [1, X, Z].

Affine-invariant in the feature block, so no standardization is
applied. Nonlinear confounding that the linear Z adjustment misses is
exactly the failure mode this baseline is expected to exhibit.
"""

from __future__ import annotations

import numpy as np
from scipy import stats
from scipy.linalg import qr

from dncit._util import Timer
from dncit.data_model import FeatureSample, TestOutcome
from dncit.errors import TooFewRows


def _independent_columns(m, tol_scale=None):
    """Column indices forming a maximal independent set, via pivoted QR."""
    if m.shape[1] == 0:
        return np.empty(0, dtype=int)
    _, r, piv = qr(m, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return np.empty(0, dtype=int)
    tol = diag[0] * max(m.shape) * np.finfo(np.float64).eps
    rank = int(np.sum(diag > tol))
    return np.sort(piv[:rank])


def _rss(design, y):
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return float(resid @ resid)


def wald_test(s: FeatureSample, alpha=0.05, extra_z=None, seed=0) -> TestOutcome:
    """OLS of y on [1, X, Z] and the joint F test of the X coefficients.

    ``extra_z`` optionally appends user-supplied confounder expansions
    (squares, interactions) to the adjustment block. Collinear columns
    are dropped and recorded in the outcome's params.
    """
    n = s.n
    z = s.z if extra_z is None else np.column_stack([s.z, np.asarray(extra_z, dtype=np.float64)])
    q, p = s.dim_x, z.shape[1]
    if n <= q + p + 1:
        raise TooFewRows(f"need n > q + p + 1 = {q + p + 1}, got n = {n}")

    base = np.column_stack([np.ones(n), z])
    keep_z = _independent_columns(base)
    base = base[:, keep_z]
    # residualize features on the kept adjustment block before rank-checking
    bx, _, _, _ = np.linalg.lstsq(base, s.x, rcond=None)
    x_resid = s.x - base @ bx
    keep_x = _independent_columns(x_resid)

    dropped_x = q - keep_x.size
    dropped_z = (p + 1) - keep_z.size
    with Timer() as t:
        rss0 = _rss(base, s.y)
        if keep_x.size == 0:
            f_stat, p_value = 0.0, 1.0
            dof1, dof2 = 0, n - base.shape[1]
        else:
            full = np.column_stack([base, s.x[:, keep_x]])
            rss1 = _rss(full, s.y)
            dof1 = keep_x.size
            dof2 = n - full.shape[1]
            if rss1 <= 0:
                f_stat = np.inf
            else:
                f_stat = ((rss0 - rss1) / dof1) / (rss1 / dof2)
                f_stat = max(f_stat, 0.0)
            p_value = float(stats.f.sf(f_stat, dof1, dof2))

    params = {
        "variant": "F",
        "dof1": int(dof1),
        "dof2": int(dof2),
        "dropped_feature_columns": int(dropped_x),
        "dropped_design_columns": int(dropped_z),
        "extra_z_columns": 0 if extra_z is None else int(np.atleast_2d(extra_z).shape[1]),
    }
    return TestOutcome.build(
        method="wald",
        statistic=f_stat,
        p_value=p_value,
        alpha=alpha,
        params=params,
        seed=seed,
        runtime_ms=t.ms,
    )
