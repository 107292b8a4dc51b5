"""Embedding maps producing feature matrices from raw object arrays.

Covers the provenance regimes that keep downstream tests valid: fixed
maps (identity, noisy identity), random linear projections seeded
independently of the data, and in-sample PCA (a function of the raw X
alone).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dncit.data_model import EmbeddingSpec
from dncit.errors import DimMismatch, RankDeficientWarning


@dataclass(frozen=True)
class RawObjectSet:
    """Flattened raw objects (desk-scale stand-in for image arrays)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] < 1:
            raise DimMismatch("raw data must be a 2-D matrix with at least one column")
        if not np.all(np.isfinite(data)):
            raise ValueError("raw data contains NaN or infinite entries")
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FittedEmbedding:
    spec: EmbeddingSpec
    projection: Optional[np.ndarray] = None
    noise_seed: Optional[int] = None
    rank_deficient: bool = False

    def __post_init__(self):
        needs_proj = self.spec.kind in ("linear_projection", "pca_insample")
        if needs_proj != (self.projection is not None):
            raise ValueError(f"projection must be present iff kind is a projection, got {self.spec.kind}")
        if self.projection is not None:
            proj = np.ascontiguousarray(self.projection, dtype=np.float64)
            object.__setattr__(self, "projection", proj)
            if self.spec.kind == "pca_insample":
                gram = proj.T @ proj
                if not np.allclose(gram, np.eye(proj.shape[1]), atol=1e-10):
                    raise ValueError("PCA projection columns must be orthonormal")

    @property
    def dim_in(self) -> Optional[int]:
        return None if self.projection is None else self.projection.shape[0]


def fit_pca_embedding(raw: RawObjectSet, q: int) -> FittedEmbedding:
    """Top-q principal directions of the column-centered raw data.

    Column signs are fixed so each component's largest-magnitude loading
    is positive. If fewer than q singular values are nonzero, the
    projection keeps only the informative columns and the result carries
    a ``rank_deficient`` flag (with a :class:`RankDeficientWarning`).
    """
    if raw.n < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 1 <= q <= min(raw.n, raw.d):
        raise ValueError(f"q={q} outside [1, min(n, d)={min(raw.n, raw.d)}]")
    centered = raw.data - raw.data.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = s[0] * max(centered.shape) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    keep = min(q, max(rank, 1))
    proj = vt[:keep].T.copy()
    flip = proj[np.abs(proj).argmax(axis=0), np.arange(keep)] < 0
    proj[:, flip] *= -1.0
    deficient = keep < q
    if deficient:
        warnings.warn(
            f"only {keep} of {q} requested components are identifiable", RankDeficientWarning
        )
    spec = EmbeddingSpec(kind="pca_insample", dim_out=keep, provenance="function_of_x")
    return FittedEmbedding(spec=spec, projection=proj, rank_deficient=deficient)


def fit_random_projection(d: int, q: int, seed: int) -> FittedEmbedding:
    """Seeded Gaussian projection, independent of any data.

    Stands in for an embedding map only weakly related to the one that
    generated the features (e.g. a transfer-learned encoder).
    """
    if d < 1 or q < 1:
        raise ValueError("d and q must be positive")
    proj = np.random.default_rng(seed).normal(size=(d, q))
    spec = EmbeddingSpec(kind="linear_projection", dim_out=q, provenance="independent_sample")
    return FittedEmbedding(spec=spec, projection=proj)


def make_identity_embedding() -> FittedEmbedding:
    return FittedEmbedding(spec=EmbeddingSpec(kind="identity", provenance="external"))


def make_noisy_embedding(noise_variance: float, noise_seed: int) -> FittedEmbedding:
    spec = EmbeddingSpec(kind="noisy", noise_variance=float(noise_variance), provenance="external")
    return FittedEmbedding(spec=spec, noise_seed=int(noise_seed))


def apply_embedding(fit: FittedEmbedding, raw: RawObjectSet) -> np.ndarray:
    """Map raw objects to their n x q feature representation."""
    kind = fit.spec.kind
    if kind == "identity":
        return raw.data.copy()
    if kind == "noisy":
        rng = np.random.default_rng(fit.noise_seed)
        sd = float(np.sqrt(fit.spec.noise_variance))
        return raw.data + rng.normal(0.0, sd, size=raw.data.shape)
    if kind in ("linear_projection", "pca_insample"):
        if raw.d != fit.dim_in:
            raise DimMismatch(f"raw dimension {raw.d} does not match fitted dimension {fit.dim_in}")
        centered = raw.data - raw.data.mean(axis=0)
        return centered @ fit.projection
    raise ValueError(f"embedding kind {kind!r} cannot be applied to raw arrays")
