"""Conditional permutation test with the graph kernel partial
correlation statistic.

The outcome's conditional law given the confounders is approximated by
a Gaussian whose mean comes from a penalized additive spline fit (one
global residual variance). Permutations of Y are sampled from the law
proportional to the product of conditional densities via sweeps of
disjoint pairwise swaps; the kernel partial correlation is evaluated on
the observed and permuted samples and compared by the permutation
p-value (1 + #{T_m >= T}) / (1 + M).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import BSpline

from dncit._util import Timer, derived_rng
from dncit.data_model import CATEGORICAL, FeatureSample, TestOutcome, standardize_columns
from dncit.errors import DegenerateDenominator, SingularBasisWarning, TooFewRows
from dncit.kernels import build_knn_graph, gaussian_gram, median_heuristic, neighbor_index_matrix

LAMBDA_GRID = np.logspace(-4.0, 4.0, 20)


@dataclass(frozen=True)
class ConditionalModel:
    """Gaussian approximation of Y | Z with homoscedastic variance."""

    fitted_means: np.ndarray
    sigma2: float
    coefficients: Optional[np.ndarray] = None
    basis: Optional[tuple] = None
    gcv_lambda: Optional[float] = None
    edf: Optional[float] = None

    def __post_init__(self):
        means = np.asarray(self.fitted_means, dtype=np.float64).ravel()
        if not np.all(np.isfinite(means)):
            raise ValueError("fitted means must be finite")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "fitted_means", means)


@dataclass(frozen=True)
class KpcParams:
    k_graph: int = 10
    kernel_sigma: Optional[float] = None  # None resolves to the median heuristic
    num_permutations: int = 199
    sweeps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.k_graph < 1:
            raise ValueError("k_graph must be >= 1")
        if self.num_permutations < 19:
            raise ValueError("num_permutations must be >= 19")
        if self.kernel_sigma is not None and self.kernel_sigma <= 0:
            raise ValueError("kernel_sigma must be positive")


def _spline_block(col, n_knots):
    """Cubic B-spline design for one column, first basis column dropped.

    Interior knots sit at equispaced quantiles; duplicated quantiles
    (heavily tied data) collapse, and with no usable interior knot the
    column enters linearly.
    """
    lo, hi = float(col.min()), float(col.max())
    span = hi - lo
    if span <= 0:
        return col.reshape(-1, 1), None
    pad = 1e-8 * span
    probs = np.linspace(0, 1, n_knots + 2)[1:-1]
    interior = np.unique(np.quantile(col, probs))
    interior = interior[(interior > lo) & (interior < hi)]
    if interior.size < 1:
        return col.reshape(-1, 1), None
    t = np.r_[[lo - pad] * 4, interior, [hi + pad] * 4]
    design = BSpline.design_matrix(col, t, 3).toarray()
    return design[:, 1:], t


def build_additive_basis(z, meta=None, n_knots=8):
    """Intercept + spline blocks for continuous columns + raw
    categorical indicator columns. Returns (design, penalty, blocks)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    n, p = z.shape
    meta = tuple(meta) if meta else ("continuous",) * p
    cols = [np.ones((n, 1))]
    penalized = [False]
    blocks = [("intercept", None)]
    for j in range(p):
        if meta[j] == CATEGORICAL:
            cols.append(z[:, j].reshape(-1, 1))
            penalized.append(False)
            blocks.append((f"z{j}", None))
        else:
            block, knots = _spline_block(z[:, j], n_knots)
            cols.append(block)
            penalized.append(knots is not None)
            blocks.append((f"z{j}", knots))
    design = np.hstack(cols)
    penalty = np.zeros((design.shape[1], design.shape[1]))
    at = 0
    for block, pen in zip(cols, penalized):
        m = block.shape[1]
        if pen and m > 2:
            d2 = np.diff(np.eye(m), n=2, axis=0)
            penalty[at : at + m, at : at + m] = d2.T @ d2
        at += m
    return design, penalty, tuple(blocks)


def _drop_collinear(design, penalty):
    from dncit.wald import _independent_columns

    keep = _independent_columns(design)
    if keep.size < design.shape[1]:
        warnings.warn(
            f"dropped {design.shape[1] - keep.size} collinear basis columns",
            SingularBasisWarning,
        )
        design = design[:, keep]
        penalty = penalty[np.ix_(keep, keep)]
    return design, penalty


def fit_conditional_model(y, z, meta=None, n_knots=8) -> ConditionalModel:
    """Penalized additive fit of y on z; smoothing weight picked by GCV
    over a fixed 20-point log grid. With no confounders this is the
    intercept-only model (mean and sample variance of y)."""
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    if z.size == 0 or z.shape[1] == 0:
        mean = float(y.mean())
        sigma2 = float(y.var(ddof=1))
        return ConditionalModel(
            fitted_means=np.full(n, mean),
            sigma2=max(sigma2, 1e-30),
            coefficients=np.array([mean]),
            basis=(("intercept", None),),
            gcv_lambda=0.0,
            edf=1.0,
        )

    design, penalty, blocks = build_additive_basis(z, meta=meta, n_knots=n_knots)
    design, penalty = _drop_collinear(design, penalty)
    m = design.shape[1]
    if n <= m:
        raise TooFewRows(f"need n > {m} basis columns, got n = {n}")
    gram = design.T @ design
    xty = design.T @ y

    best = None
    for lam in LAMBDA_GRID:
        a = gram + lam * penalty
        try:
            coef = np.linalg.solve(a, xty)
            edf = float(np.trace(np.linalg.solve(a, gram)))
        except np.linalg.LinAlgError:
            continue
        resid = y - design @ coef
        rss = float(resid @ resid)
        gcv = n * rss / max(n - edf, 1e-8) ** 2
        if best is None or gcv < best[0]:
            best = (gcv, lam, coef, edf, rss)
    if best is None:
        raise np.linalg.LinAlgError("no smoothing weight produced a solvable system")
    _, lam, coef, edf, rss = best
    sigma2 = rss / max(n - edf, 1.0)
    return ConditionalModel(
        fitted_means=design @ coef,
        sigma2=max(float(sigma2), 1e-30),
        coefficients=coef,
        basis=blocks,
        gcv_lambda=float(lam),
        edf=edf,
    )


def cpt_sample_permutations(model: ConditionalModel, y, num_permutations, sweeps=50, seed=0):
    """Sample permutations targeting P(pi) ∝ prod_i p(y_{pi(i)} | z_i).

    Each of the independent chains restarts from the identity and runs
    ``sweeps`` rounds of disjoint random pair proposals. A proposed swap
    with density ratio q is accepted with probability q / (1 + q), which
    keeps every sweep reversible and aperiodic for any q (including the
    exchangeable case q = 1). Returns an (M, n) array of permutations.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    mu = model.fitted_means
    n = len(y)
    if len(mu) != n:
        raise ValueError("model was fitted on a different sample size")
    m = int(num_permutations)
    rng = derived_rng(seed, 11)
    perm = np.tile(np.arange(n, dtype=np.int64), (m, 1))
    if n < 2 or m == 0:
        return perm
    npairs = n // 2
    inv_s2 = 1.0 / model.sigma2
    for _ in range(int(sweeps)):
        ranks = rng.random((m, n)).argsort(axis=1)
        ipos, jpos = ranks[:, :npairs], ranks[:, npairs : 2 * npairs]
        pi = np.take_along_axis(perm, ipos, 1)
        pj = np.take_along_axis(perm, jpos, 1)
        logq = -(y[pi] - y[pj]) * (mu[ipos] - mu[jpos]) * inv_s2
        accept = np.log(rng.random((m, npairs))) < -np.logaddexp(0.0, -logq)
        np.put_along_axis(perm, ipos, np.where(accept, pj, pi), 1)
        np.put_along_axis(perm, jpos, np.where(accept, pi, pj), 1)
    return perm


class _KpcEvaluator:
    """Caches the kernel Gram matrix and the confounder-graph term so the
    permuted statistics only rebuild the (Y, Z) graph."""

    def __init__(self, x_std, z_std, k_graph, sigma):
        n = x_std.shape[0]
        if n <= k_graph + 1:
            raise TooFewRows(f"need n > k_graph + 1 = {k_graph + 1}")
        self.z = z_std
        self.k = k_graph
        self.gram = gaussian_gram(x_std, sigma)
        self._rows = np.arange(n)[:, None]
        if z_std.shape[1]:
            gz = build_knn_graph(z_std, k_graph)
            self.term_z = self._graph_term(gz)
        else:
            off = self.gram.sum() - np.trace(self.gram)
            self.term_z = off / (n * (n - 1))
        self.denominator = 1.0 - self.term_z  # Gaussian kernel: k(x, x) = 1
        if abs(self.denominator) < 1e-12:
            raise DegenerateDenominator(
                "features are numerically a function of the conditioning set"
            )

    def _graph_term(self, graph):
        idx = neighbor_index_matrix(graph)
        return float(self.gram[self._rows, idx].mean())

    def statistic(self, y_std):
        ydd = np.column_stack([y_std, self.z]) if self.z.shape[1] else y_std.reshape(-1, 1)
        gy = build_knn_graph(ydd, self.k)
        return (self._graph_term(gy) - self.term_z) / self.denominator


def _standardize_sample(s: FeatureSample):
    x_std, _, _ = standardize_columns(s.x)
    y_std, _, _ = standardize_columns(s.y)
    z_std, _, _ = standardize_columns(s.z) if s.dim_z else (s.z, None, None)
    return x_std, y_std[:, 0], z_std


def kpc_statistic(s: FeatureSample, p: KpcParams | None = None) -> float:
    """Graph estimator of the kernel partial correlation of X and Y
    given Z, in [0, 1] up to estimation noise.

    Euclidean knn graphs are built on standardized Z and on standardized
    (Y, Z); the Gaussian kernel acts on standardized X. Without
    confounders the Z-graph term degrades to the all-pairs mean kernel.
    """
    p = p or KpcParams()
    x_std, y_std, z_std = _standardize_sample(s)
    sigma = p.kernel_sigma or median_heuristic(x_std)
    ev = _KpcEvaluator(x_std, z_std, p.k_graph, sigma)
    return float(ev.statistic(y_std))


def cpt_kpc_test(
    s: FeatureSample,
    p: KpcParams | None = None,
    alpha=0.05,
    conditional_model: ConditionalModel | None = None,
) -> TestOutcome:
    """Conditional permutation test of X ⟂ Y | Z with the KPC statistic.

    ``conditional_model`` overrides the in-sample additive fit, e.g.
    when the true conditional law of Y given Z is known or estimated on
    ancillary data.
    """
    p = p or KpcParams()
    with Timer() as t:
        model = conditional_model or fit_conditional_model(s.y, s.z, meta=s.column_meta)
        x_std, y_std, z_std = _standardize_sample(s)
        sigma = p.kernel_sigma or median_heuristic(x_std)
        ev = _KpcEvaluator(x_std, z_std, p.k_graph, sigma)
        observed = ev.statistic(y_std)
        perms = cpt_sample_permutations(model, s.y, p.num_permutations, sweeps=p.sweeps, seed=p.seed)
        exceed = 0
        for row in perms:
            if ev.statistic(y_std[row]) >= observed:
                exceed += 1
        p_value = (1 + exceed) / (1 + p.num_permutations)
    params = {
        "k_graph": p.k_graph,
        "kernel_sigma": sigma,
        "num_permutations": p.num_permutations,
        "sweeps": p.sweeps,
        "conditional_model": "supplied" if conditional_model is not None else "additive_fit",
        "model_sigma2": model.sigma2,
    }
    if model.gcv_lambda is not None:
        params["gcv_lambda"] = model.gcv_lambda
    return TestOutcome.build(
        method="cpt_kpc",
        statistic=observed,
        p_value=p_value,
        alpha=alpha,
        params=params,
        seed=p.seed,
        runtime_ms=t.ms,
    )
