"""Prediction-based test: does adding the features to the confounders
reduce held-out squared-error risk when predicting the outcome?

Bagged regression trees are fit on the train half of repeated random
splits; per-row test losses of the confounder-only model minus the full
model are pooled and compared to zero by a one-sided paired test. Mean
dependence only: signals invisible to the squared loss stay invisible
to this test. Trees are scale-invariant, so inputs are not
standardized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.ensemble import RandomForestRegressor

from dncit._util import Timer, derived_rng, derived_seed
from dncit.data_model import FeatureSample, TestOutcome
from dncit.errors import TooFewRows


@dataclass(frozen=True)
class FcitParams:
    """Learner and splitting knobs; ``num_splits=1`` recovers the
    single-split variant."""

    train_fraction: float = 0.5
    tree_count: int = 100
    max_depth: int = 8
    min_leaf: int = 5
    num_splits: int = 8
    seed: int = 0
    paired_test: str = "t"  # or "sign" for heavy-tailed losses

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if min(self.tree_count, self.max_depth, self.min_leaf, self.num_splits) < 1:
            raise ValueError("tree_count, max_depth, min_leaf, num_splits must be >= 1")
        if self.paired_test not in ("t", "sign"):
            raise ValueError(f"unknown paired_test {self.paired_test!r}")


class _ConstantPredictor:
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, m):
        return np.full(np.atleast_2d(m).shape[0], self.value)


def fit_tree_ensemble(features, targets, p: FcitParams, seed):
    """Bagged regression trees (squared-error splits, ceil(sqrt(d))
    features per split); returns a pure matrix -> vector predictor."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if features.shape[0] <= 2 * p.min_leaf:
        raise TooFewRows(f"need more than {2 * p.min_leaf} training rows")
    model = RandomForestRegressor(
        n_estimators=p.tree_count,
        criterion="squared_error",
        max_depth=p.max_depth,
        min_samples_leaf=p.min_leaf,
        max_features=math.ceil(math.sqrt(features.shape[1])),
        bootstrap=True,
        random_state=int(seed) % 2**32,
        n_jobs=1,
    )
    model.fit(features, targets)
    return model.predict


def _paired_pvalue(diffs, kind):
    """One-sided test of mean(diffs) > 0."""
    m = len(diffs)
    if kind == "sign":
        nonzero = diffs[diffs != 0]
        if nonzero.size == 0:
            return 0.0, 1.0
        wins = int((nonzero > 0).sum())
        return float(wins), float(stats.binom.sf(wins - 1, nonzero.size, 0.5))
    sd = diffs.std(ddof=1)
    if sd == 0:
        return 0.0, 1.0  # no variation, no evidence
    t = diffs.mean() / (sd / np.sqrt(m))
    return float(t), float(stats.t.sf(t, m - 1))


def fcit_test(s: FeatureSample, p: FcitParams | None = None, alpha=0.05) -> TestOutcome:
    """Risk-comparison test over ``num_splits`` seeded random splits.

    Only train rows ever reach the learners; with no confounders the
    reduced model is the train-mean constant predictor.
    """
    p = p or FcitParams()
    n = s.n
    if n < 60:
        raise TooFewRows(f"need n >= 60, got {n}")
    full_features = np.column_stack([s.x, s.z]) if s.dim_z else s.x
    with Timer() as t:
        diffs = []
        for split in range(p.num_splits):
            rng = derived_rng(p.seed, 31, split)
            order = rng.permutation(n)
            n_train = int(round(p.train_fraction * n))
            train, test = order[:n_train], order[n_train:]
            f_hat = fit_tree_ensemble(
                full_features[train], s.y[train], p, derived_seed(p.seed, 32, split)
            )
            if s.dim_z:
                g_hat = fit_tree_ensemble(
                    s.z[train], s.y[train], p, derived_seed(p.seed, 33, split)
                )
            else:
                g_hat = _ConstantPredictor(s.y[train].mean())
            loss_f = (s.y[test] - f_hat(full_features[test])) ** 2
            loss_g = (s.y[test] - g_hat(s.z[test] if s.dim_z else s.x[test])) ** 2
            diffs.append(loss_g - loss_f)
        pooled = np.concatenate(diffs)
        statistic, p_value = _paired_pvalue(pooled, p.paired_test)
    params = {
        "train_fraction": p.train_fraction,
        "tree_count": p.tree_count,
        "max_depth": p.max_depth,
        "min_leaf": p.min_leaf,
        "num_splits": p.num_splits,
        "paired_test": p.paired_test,
        "pooled_differences": int(pooled.size),
    }
    return TestOutcome.build(
        method="fcit",
        statistic=statistic,
        p_value=p_value,
        alpha=alpha,
        params=params,
        seed=p.seed,
        runtime_ms=t.ms,
    )
