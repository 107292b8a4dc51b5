"""Synthetic data-generating mechanisms, campaign execution and
calibration/power summaries.

Confounders follow a fixed roster (two continuous, then a binary and a
3-level categorical, then two more continuous, then standard-normal
filler) with seeded cross-correlations; features are a nonlinear
function of the continuous confounders plus noise; the outcome mixes a
switchable feature effect with a linear/squared/complex confounder
effect under normalized random weights. Replications derive all
randomness from (master_seed, data_seed, replication), so campaigns are
reproducible and independent of worker scheduling.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from dncit._util import Timer, derived_rng, derived_seed
from dncit.data_model import CATEGORICAL, CONTINUOUS, EmbeddingSpec, FeatureSample
from dncit.embeddings import (
    RawObjectSet,
    apply_embedding,
    fit_pca_embedding,
    fit_random_projection,
    make_noisy_embedding,
)
from dncit.errors import MissingColumn, UnsupportedDim
from dncit.run import run_cit

CONF_DIMS = (1, 2, 4, 6, 10, 15)
GZ_KINDS = ("linear", "squared", "complex")

MAX_ABS_CORR = 0.4
LATENT_RANK = 8
FEATURE_NOISE_SD = 0.7


@dataclass(frozen=True)
class ConfounderMeta:
    """Column labels, kinds and role bindings of a generated Z matrix."""

    names: tuple
    kinds: tuple
    roles: dict

    @property
    def continuous_idx(self):
        return tuple(i for i, k in enumerate(self.kinds) if k == CONTINUOUS)


@dataclass(frozen=True)
class DgmConfig:
    """One data-generating mechanism: sample size, confounder roster
    dimension, confounder-effect shape, dependence switch and the
    embedding applied before testing."""

    n: int
    conf_dim: int
    g_z_kind: str
    c: int
    embedding: EmbeddingSpec = field(default_factory=lambda: EmbeddingSpec(kind="identity"))
    true_dim_q: int = 139
    weight_seed: int = 0
    data_seed: int = 0
    noise_sd: Optional[float] = None  # None: pilot-calibrated to unit SNR under c=1

    def __post_init__(self):
        if self.conf_dim not in CONF_DIMS:
            raise UnsupportedDim(f"conf_dim must be one of {CONF_DIMS}, got {self.conf_dim}")
        if self.g_z_kind not in GZ_KINDS:
            raise ValueError(f"g_z_kind must be one of {GZ_KINDS}, got {self.g_z_kind!r}")
        if self.c not in (0, 1):
            raise ValueError("c must be 0 or 1")
        if self.n < 50:
            raise ValueError("n must be >= 50")
        if self.true_dim_q < 1:
            raise ValueError("true_dim_q must be >= 1")
        if self.noise_sd is not None and self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")


@dataclass(frozen=True)
class CampaignResult:
    dgm: DgmConfig
    method: str
    alpha: float
    p_values: np.ndarray  # NaN where a replication errored
    seeds: np.ndarray
    rejection_rate: float
    mc_se: float
    mean_runtime_ms: float
    ks_stat: float
    noise_sd: float
    n_sim: int
    errors: tuple
    method_params: dict

    @property
    def n_valid(self) -> int:
        return int(np.sum(np.isfinite(self.p_values)))


def monte_carlo_se(rate, n_sim):
    """Binomial standard error sqrt(rate (1 - rate) / n_sim)."""
    return float(np.sqrt(rate * (1.0 - rate) / n_sim))


def ks_uniform_statistic(p_values):
    """One-sample Kolmogorov-Smirnov distance from Uniform[0, 1]."""
    p = np.sort(np.asarray(p_values, dtype=np.float64))
    n = len(p)
    if n == 0:
        return float("nan")
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - p), np.max(p - (grid - 1.0 / n))))


def _mixing_matrix(m, mixing_seed):
    """Unit-row-norm lower-triangular mixer with pairwise correlations
    capped at MAX_ABS_CORR."""
    rng = np.random.default_rng(mixing_seed)
    low = np.tril(rng.uniform(-0.25, 0.25, size=(m, m)), k=-1)
    while True:
        l = np.eye(m) + low
        l /= np.linalg.norm(l, axis=1, keepdims=True)
        corr = l @ l.T
        off = np.abs(corr - np.diag(np.diag(corr))).max() if m > 1 else 0.0
        if off <= MAX_ABS_CORR:
            return l
        low *= 0.8


def generate_confounders(n, conf_dim, seed, mixing_seed=None):
    """Draw an encoded confounder matrix mimicking a realistic roster.

    Dimensions 1-2 are continuous (a standardized uniform age-like
    column, a Gaussian head-size-like column); from dimension 4 a binary
    and a 3-level categorical (two indicator columns) join; from 6 two
    more continuous columns; beyond that standard-normal filler.
    Cross-correlations within the continuous block come from a fixed
    seeded lower-triangular mixing.
    """
    if conf_dim not in CONF_DIMS:
        raise UnsupportedDim(f"conf_dim must be one of {CONF_DIMS}, got {conf_dim}")
    rng = np.random.default_rng(seed)
    if mixing_seed is None:
        mixing_seed = derived_seed(seed, 7)

    cont_roles = ["age"]
    if conf_dim >= 2:
        cont_roles.append("headsize")
    if conf_dim >= 6:
        cont_roles += ["date", "qc"]
    if conf_dim >= 10:
        cont_roles += [f"pc{i + 1}" for i in range(conf_dim - 6)]

    cont = np.empty((n, len(cont_roles)))
    cont[:, 0] = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=n)  # age, unit variance
    for j in range(1, len(cont_roles)):
        cont[:, j] = rng.standard_normal(n)
    cont = cont @ _mixing_matrix(len(cont_roles), mixing_seed).T

    columns, names, kinds, roles = [], [], [], {}

    def add(col, name, kind, role_key=None):
        roles.setdefault(role_key or name, len(names))
        columns.append(col)
        names.append(name)
        kinds.append(kind)

    it = iter(range(len(cont_roles)))
    add(cont[:, next(it)], "age", CONTINUOUS)
    if conf_dim >= 2:
        add(cont[:, next(it)], "headsize", CONTINUOUS)
    if conf_dim >= 4:
        add(rng.binomial(1, 0.5, size=n).astype(np.float64), "sex", CATEGORICAL)
        site = rng.integers(0, 3, size=n)
        roles["site"] = (len(names), len(names) + 1)
        for level in ("b", "c"):
            columns.append((site == ("b", "c").index(level) + 1).astype(np.float64))
            names.append(f"site={level}")
            kinds.append(CATEGORICAL)
    if conf_dim >= 6:
        add(cont[:, next(it)], "date", CONTINUOUS)
        add(cont[:, next(it)], "qc", CONTINUOUS)
    for j in it:
        add(cont[:, j], cont_roles[j], CONTINUOUS)

    z = np.column_stack(columns)
    meta = ConfounderMeta(names=tuple(names), kinds=tuple(kinds), roles=roles)
    return z, meta


def generate_true_features(z, meta, q, weight_seed, noise_seed, noise_sd=FEATURE_NOISE_SD, b_matrix=None):
    """Features nonlinearly confounded by the continuous Z block:
    column-standardized tanh(Z_cont A) B + noise, with A and B fixed by
    the weight seed and the noise by its own seed."""
    zc = np.asarray(z, dtype=np.float64)[:, list(meta.continuous_idx)]
    wrng = np.random.default_rng(weight_seed)
    a = wrng.normal(size=(zc.shape[1], LATENT_RANK))
    b = wrng.normal(size=(LATENT_RANK, q)) if b_matrix is None else np.asarray(b_matrix, dtype=np.float64)
    feats = np.tanh(zc @ a) @ b
    if noise_sd > 0:
        feats = feats + np.random.default_rng(noise_seed).normal(0.0, noise_sd, size=feats.shape)
    mean = feats.mean(axis=0)
    sd = feats.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return (feats - mean) / sd


def gz_transform(z, meta, kind):
    """Confounder-effect design: identity, squares of the continuous
    columns, or squares plus sex interactions and date powers."""
    z = np.asarray(z, dtype=np.float64)
    if kind == "linear":
        return z
    jc = list(meta.continuous_idx)
    if kind == "squared":
        return np.column_stack([z, z[:, jc] ** 2])
    if kind == "complex":
        if "sex" not in meta.roles or "date" not in meta.roles:
            raise MissingColumn("complex transform needs sex-like and date-like columns (conf_dim >= 6)")
        sex = z[:, meta.roles["sex"]]
        date = z[:, meta.roles["date"]]
        return np.column_stack(
            [z, z[:, jc] ** 2, z[:, jc] * sex[:, None], date**3, date**4]
        )
    raise ValueError(f"unknown g_z kind {kind!r}")


def draw_outcome_weights(q, p_z, weight_seed):
    """Normalized random weights for the outcome equation.

    The feature weights carry a Bernoulli(0.5) activity mask; an
    all-zero mask would silently collapse c=1 to c=0, so the draw is
    flagged and retried with the next seed.
    """
    seed = int(weight_seed)
    redraws = 0
    while True:
        rng = np.random.default_rng(seed)
        delta_x = rng.standard_normal(q)
        active = rng.binomial(1, 0.5, size=q)
        delta_z = rng.standard_normal(p_z)
        if active.any():
            break
        redraws += 1
        seed += 1
    w_x = active * np.abs(delta_x) / np.abs(delta_x).sum()
    w_z = np.abs(delta_z) / np.abs(delta_z).sum()
    return w_x, w_z, {"weight_seed_used": seed, "weight_redraws": redraws}


def simulate_outcome(features, gz, c, noise_sd, seed, weight_seed=None):
    """Outcome draw y = c F w_x + g_z(Z) w_z + eps."""
    features = np.asarray(features, dtype=np.float64)
    gz = np.asarray(gz, dtype=np.float64)
    if features.shape[0] != gz.shape[0]:
        raise ValueError("features and gz row counts differ")
    if weight_seed is None:
        weight_seed = derived_seed(seed, 40)
    w_x, w_z, info = draw_outcome_weights(features.shape[1], gz.shape[1], weight_seed)
    eps = np.random.default_rng(seed).normal(0.0, noise_sd, size=features.shape[0])
    return c * features @ w_x + gz @ w_z + eps, info


def _signal_sd(dgm: DgmConfig, n_pilot=4000):
    """Pilot draw of the systematic part under c=1, used to calibrate
    the noise SD to unit signal-to-noise."""
    z, meta = generate_confounders(
        n_pilot, dgm.conf_dim, derived_seed(dgm.weight_seed, 50), mixing_seed=derived_seed(dgm.weight_seed, 101)
    )
    feats = generate_true_features(
        z, meta, dgm.true_dim_q, derived_seed(dgm.weight_seed, 102), derived_seed(dgm.weight_seed, 51)
    )
    gz = gz_transform(z, meta, dgm.g_z_kind)
    w_x, w_z, _ = draw_outcome_weights(feats.shape[1], gz.shape[1], derived_seed(dgm.weight_seed, 103))
    signal = feats @ w_x + gz @ w_z
    return float(signal.std(ddof=1))


def resolve_noise_sd(dgm: DgmConfig) -> float:
    return dgm.noise_sd if dgm.noise_sd is not None else _signal_sd(dgm)


def _embed_features(feats, dgm: DgmConfig, rep_seed):
    spec = dgm.embedding
    if spec.kind == "identity":
        return feats
    raw = RawObjectSet(feats)
    if spec.kind == "noisy":
        fit = make_noisy_embedding(spec.noise_variance, rep_seed)
    elif spec.kind == "linear_projection":
        dim_out = spec.dim_out or feats.shape[1]
        fit = fit_random_projection(feats.shape[1], dim_out, derived_seed(dgm.weight_seed, 104))
    elif spec.kind == "pca_insample":
        fit = fit_pca_embedding(raw, spec.dim_out or feats.shape[1])
    else:
        raise ValueError(f"embedding kind {spec.kind!r} is not usable in the harness")
    return apply_embedding(fit, raw)


def simulate_replication(dgm: DgmConfig, master_seed, rep, noise_sd) -> FeatureSample:
    """Materialize one replication's sample, fully determined by
    (dgm, master_seed, rep)."""
    key = (int(dgm.data_seed), int(rep))
    z, meta = generate_confounders(
        dgm.n, dgm.conf_dim, derived_seed(master_seed, *key, 1), mixing_seed=derived_seed(dgm.weight_seed, 101)
    )
    feats = generate_true_features(
        z, meta, dgm.true_dim_q, derived_seed(dgm.weight_seed, 102), derived_seed(master_seed, *key, 2)
    )
    gz = gz_transform(z, meta, dgm.g_z_kind)
    y, _ = simulate_outcome(
        feats, gz, dgm.c, noise_sd, derived_seed(master_seed, *key, 3), weight_seed=derived_seed(dgm.weight_seed, 103)
    )
    x = _embed_features(feats, dgm, derived_seed(master_seed, *key, 4))
    return FeatureSample(x=x, y=y, z=z, column_meta=meta.kinds, z_names=meta.names)


def _run_replication(args):
    dgm, method, method_params, alpha, master_seed, rep, noise_sd = args
    seed = derived_seed(master_seed, dgm.data_seed, rep, 5)
    try:
        sample = simulate_replication(dgm, master_seed, rep, noise_sd)
        outcome = run_cit(method, sample, alpha=alpha, seed=seed, **method_params)
        return rep, seed, outcome.p_value, outcome.runtime_ms, None
    except Exception as exc:  # recorded, not fatal
        return rep, seed, float("nan"), 0.0, f"{type(exc).__name__}: {exc}"


def run_campaign(
    dgm: DgmConfig,
    method,
    method_params=None,
    n_sim=200,
    alpha=0.05,
    master_seed=0,
    threads=1,
) -> CampaignResult:
    """Run ``n_sim`` independent replications and aggregate.

    Replication errors are recorded and excluded from the rejection
    rate. Results are identical for any ``threads`` value.
    """
    if n_sim < 20:
        raise ValueError("n_sim must be >= 20")
    method_params = dict(method_params or {})
    noise_sd = resolve_noise_sd(dgm)
    jobs = [(dgm, method, method_params, alpha, master_seed, rep, noise_sd) for rep in range(n_sim)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_replication, jobs, chunksize=max(1, n_sim // (8 * threads))))
    else:
        rows = [_run_replication(j) for j in jobs]
    rows.sort(key=lambda r: r[0])

    p_values = np.array([r[2] for r in rows])
    seeds = np.array([r[1] for r in rows], dtype=np.uint64)
    runtimes = np.array([r[3] for r in rows])
    errors = tuple((r[0], r[4]) for r in rows if r[4] is not None)
    valid = np.isfinite(p_values)
    rr = float(np.mean(p_values[valid] <= alpha)) if valid.any() else float("nan")
    return CampaignResult(
        dgm=dgm,
        method=method,
        alpha=alpha,
        p_values=p_values,
        seeds=seeds,
        rejection_rate=rr,
        mc_se=monte_carlo_se(rr, int(valid.sum())) if valid.any() else float("nan"),
        mean_runtime_ms=float(runtimes[valid].mean()) if valid.any() else float("nan"),
        ks_stat=ks_uniform_statistic(p_values[valid]) if valid.any() else float("nan"),
        noise_sd=noise_sd,
        n_sim=n_sim,
        errors=errors,
        method_params=method_params,
    )
