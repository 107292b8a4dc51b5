"""Core domain types, validation, and CSV ingestion.

Every test consumes a :class:`FeatureSample` holding the feature matrix
X (n x q), the scalar outcome Y (length n) and the encoded confounder
matrix Z (n x p, possibly p = 0 for unconditional tests), and returns a
:class:`TestOutcome`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from dncit.errors import DimMismatch, EmptyInput, NonNumeric, RowMismatch

METHODS = ("rcot", "cpt_kpc", "cmiknn", "fcit", "wald")

EMBEDDING_KINDS = ("identity", "noisy", "linear_projection", "pca_insample", "precomputed")
PROVENANCES = ("independent_sample", "function_of_xz", "function_of_x", "external")

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureSample:
    """Validated (X, Y, Z) triple shared by all tests.

    ``column_meta`` flags each Z column as ``continuous`` or
    ``categorical`` (i.e. a 0/1 level indicator produced by encoding);
    ``z_names`` keeps the originating column labels when loaded from CSV.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    column_meta: tuple = ()
    z_names: Optional[tuple] = None

    def __post_init__(self):
        x = _readonly(np.atleast_2d(np.asarray(self.x, dtype=np.float64)))
        y = _readonly(np.asarray(self.y, dtype=np.float64).ravel())
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1) if z.size else z.reshape(len(y), 0)
        z = _readonly(z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        n = len(y)
        if x.shape[0] != n or z.shape[0] != n:
            raise RowMismatch(
                f"row counts differ: x has {x.shape[0]}, y has {n}, z has {z.shape[0]}"
            )
        if n < 3:
            raise EmptyInput(f"need at least 3 rows, got {n}")
        if x.shape[1] < 1:
            raise DimMismatch("x needs at least one feature column")
        for name, arr in (("x", x), ("y", y), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise NonNumeric(f"{name} contains NaN or infinite entries")
        meta = tuple(self.column_meta) if self.column_meta else tuple(CONTINUOUS for _ in range(z.shape[1]))
        if len(meta) != z.shape[1]:
            raise DimMismatch(f"column_meta has {len(meta)} entries for {z.shape[1]} z columns")
        for m in meta:
            if m not in (CONTINUOUS, CATEGORICAL):
                raise ValueError(f"unknown column flag {m!r}")
        object.__setattr__(self, "column_meta", meta)
        if self.z_names is not None:
            names = tuple(str(s) for s in self.z_names)
            if len(names) != z.shape[1]:
                raise DimMismatch(f"z_names has {len(names)} entries for {z.shape[1]} z columns")
            object.__setattr__(self, "z_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim_x(self) -> int:
        return self.x.shape[1]

    @property
    def dim_z(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class TestOutcome:
    """Result of one conditional independence test."""

    method: str
    statistic: float
    p_value: float
    reject: bool
    alpha: float
    params: dict
    seed: int
    runtime_ms: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value {self.p_value} outside [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha {self.alpha} outside (0, 1)")
        if self.reject != (self.p_value <= self.alpha):
            raise ValueError("reject flag inconsistent with p_value and alpha")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.runtime_ms < 0:
            raise ValueError("runtime_ms must be nonnegative")

    @classmethod
    def build(cls, method, statistic, p_value, alpha, params, seed, runtime_ms):
        p_value = float(min(1.0, max(0.0, p_value)))
        return cls(
            method=method,
            statistic=float(statistic),
            p_value=p_value,
            reject=bool(p_value <= alpha),
            alpha=float(alpha),
            params=dict(params),
            seed=int(seed),
            runtime_ms=float(runtime_ms),
        )


@dataclass(frozen=True)
class EmbeddingSpec:
    """Declaration of how the feature matrix was produced.

    ``provenance`` records what information the embedding parameters
    were estimated from, which is what decides whether a downstream test
    stays valid: an independent sample, a function of (X, Z), a function
    of X alone (e.g. in-sample PCA), or an external/untracked source.
    """

    kind: str
    dim_out: Optional[int] = None
    noise_variance: float = 0.0
    provenance: str = "external"

    def __post_init__(self):
        if self.kind not in EMBEDDING_KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if (self.kind == "noisy") != (self.noise_variance > 0):
            raise ValueError("noise_variance must be > 0 exactly when kind is 'noisy'")
        if self.dim_out is not None and self.dim_out < 1:
            raise ValueError("dim_out must be a positive integer")


def standardize_columns(m):
    """Center and scale each column to mean 0 and sample SD 1 (ddof=1).

    Constant columns come back as all zeros with their SD recorded as 0.
    Returns ``(standardized, means, sds)``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.shape[0] < 2:
        raise EmptyInput("standardize_columns needs at least 2 rows")
    means = m.mean(axis=0)
    sds = m.std(axis=0, ddof=1)
    out = np.zeros_like(m)
    ok = sds > 0
    out[:, ok] = (m[:, ok] - means[ok]) / sds[ok]
    sds = np.where(ok, sds, 0.0)
    return out, means, sds


def _read_csv(path):
    try:
        df = pd.read_csv(path, header=0)
    except FileNotFoundError:
        raise
    except Exception as exc:  # malformed CSV
        raise NonNumeric(f"{path}: could not parse CSV ({exc})")
    if df.shape[0] == 0:
        raise EmptyInput(f"{path}: no data rows")
    return df

def _numeric_block(df, path):
    """All-numeric matrix from a frame; names the offending cell otherwise."""
    cols = []
    for name in df.columns:
        col = pd.to_numeric(df[name], errors="coerce")
        bad = col.isna() & ~df[name].isna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise NonNumeric(f"{path}: non-numeric cell {df[name].iloc[row]!r} in column {name!r} (row {row})")
        if col.isna().any():
            raise NonNumeric(f"{path}: missing value in column {name!r}")
        cols.append(col.to_numpy(dtype=np.float64))
    return np.column_stack(cols) if cols else np.empty((len(df), 0))


def _encode_z(df, path):
    """One-hot encode categorical z columns, dropping the first level.

    Levels sort alphabetically and the first is the reference, which
    keeps downstream design matrices full rank.
    """
    blocks, meta, names = [], [], []
    for name in df.columns:
        col = df[name]
        if col.isna().any():
            raise NonNumeric(f"{path}: missing value in column {name!r}")
        numeric = pd.to_numeric(col, errors="coerce")
        if numeric.notna().all():
            blocks.append(numeric.to_numpy(dtype=np.float64).reshape(-1, 1))
            meta.append(CONTINUOUS)
            names.append(str(name))
        else:
            levels = sorted(str(v) for v in col.unique())
            values = col.astype(str).to_numpy()
            for level in levels[1:]:
                blocks.append((values == level).astype(np.float64).reshape(-1, 1))
                meta.append(CATEGORICAL)
                names.append(f"{name}={level}")
    z = np.hstack(blocks) if blocks else np.empty((len(df), 0))
    return z, tuple(meta), tuple(names)


def load_sample(x_path, y_path, z_path=None) -> FeatureSample:
    """Load and validate a sample from CSV files.

    Rows align by order unless every file carries an ``id`` column, in
    which case y (and z) are joined to x's ids and unmatched ids raise
    :class:`RowMismatch`. Categorical z columns are one-hot encoded with
    the alphabetically first level dropped.
    """
    frames = {"x": _read_csv(x_path), "y": _read_csv(y_path)}
    if z_path is not None:
        frames["z"] = _read_csv(z_path)

    if all("id" in f.columns for f in frames.values()):
        ref = frames["x"]["id"]
        if ref.duplicated().any():
            raise RowMismatch(f"{x_path}: duplicate ids")
        for key, f in list(frames.items()):
            if key == "x":
                continue
            if f["id"].duplicated().any():
                raise RowMismatch(f"duplicate ids in {key} file")
            joined = f.set_index("id").reindex(ref.to_numpy())
            if joined.isna().all(axis=1).any():
                missing = ref[~ref.isin(f["id"])].tolist()
                raise RowMismatch(f"ids {missing[:5]} from {x_path} missing in the {key} file")
            if len(f) != len(ref):
                raise RowMismatch(f"{key} file has ids not present in {x_path}")
            frames[key] = joined.reset_index(drop=True)
        frames["x"] = frames["x"].drop(columns=["id"])
    ns = {k: len(f) for k, f in frames.items()}
    if len(set(ns.values())) != 1:
        raise RowMismatch(f"row counts differ across files: {ns}")

    x = _numeric_block(frames["x"], x_path)
    ymat = _numeric_block(frames["y"], y_path)
    if ymat.shape[1] != 1:
        raise DimMismatch(f"{y_path}: expected exactly one outcome column, found {ymat.shape[1]}")
    if "z" in frames:
        z, meta, names = _encode_z(frames["z"], z_path)
    else:
        z, meta, names = np.empty((len(ymat), 0)), (), ()
    return FeatureSample(x=x, y=ymat[:, 0], z=z, column_meta=meta, z_names=names or None)


def save_sample(sample: FeatureSample, x_path, y_path, z_path=None):
    """Write a sample back to CSV at 17 significant digits.

    Finite doubles round-trip bit-for-bit through :func:`load_sample`.
    Categorical z columns are written in encoded (numeric) form.
    """
    def write(path, m, names):
        header = ",".join(names)
        np.savetxt(path, m, delimiter=",", header=header, comments="", fmt="%.17g")

    write(x_path, sample.x, [f"x{i}" for i in range(sample.dim_x)])
    write(y_path, sample.y.reshape(-1, 1), ["y"])
    if z_path is not None and sample.dim_z:
        names = sample.z_names or [f"z{i}" for i in range(sample.dim_z)]
        write(z_path, sample.z, names)
