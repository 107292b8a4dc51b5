"""Residual audit of confounder control.

For each base confounder, its declared transforms are linearly
regressed out of the feature matrix and a conditional independence test
checks whether the residuals still carry signal about that confounder
given the remaining confounder set. A small p-value flags insufficient
control (e.g. an unmodelled nonlinearity).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from dncit.data_model import FeatureSample
from dncit.errors import RankDeficientWarning, SchemaError
from dncit.run import run_cit
from dncit.wald import _independent_columns


@dataclass(frozen=True)
class ConfounderSpec:
    """Base confounders, their declared expansions, and column bindings.

    ``bindings`` maps every base name to the z column indices holding it
    (several for an encoded categorical). ``expansions`` maps a base
    name to derived-column expressions over base names: ``name^k`` for
    powers and ``name*other`` for interactions.
    """

    base_names: tuple
    expansions: dict
    bindings: dict

    def __post_init__(self):
        if len(set(self.base_names)) != len(self.base_names):
            raise SchemaError("duplicate base confounder names")
        for name in self.base_names:
            if name not in self.bindings:
                raise SchemaError(f"no column binding for base confounder {name!r}")
        for name, terms in self.expansions.items():
            if name not in self.base_names:
                raise SchemaError(f"expansions: unknown base confounder {name!r}")
            if len(set(terms)) != len(terms):
                raise SchemaError(f"duplicate expansion terms for {name!r}")
            for term in terms:
                for ref in _term_refs(term):
                    if ref not in self.base_names:
                        raise SchemaError(f"expansion {term!r} references unknown base {ref!r}")


def _term_refs(term):
    if "^" in term:
        return [term.split("^", 1)[0]]
    if "*" in term:
        return term.split("*")
    return [term]


def _expansion_columns(z, spec: ConfounderSpec, name):
    """Evaluate the derived columns declared for one base confounder."""
    cols = []
    for term in spec.expansions.get(name, ()):
        if "^" in term:
            base, power = term.split("^", 1)
            block = z[:, list(spec.bindings[base])]
            cols.append(block ** float(power))
        elif "*" in term:
            left, right = term.split("*", 1)
            bl = z[:, list(spec.bindings[left])]
            br = z[:, list(spec.bindings[right])]
            # pairwise products across the two (possibly multi-column) blocks
            cols.append((bl[:, :, None] * br[:, None, :]).reshape(len(z), -1))
        else:
            cols.append(z[:, list(spec.bindings[term])])
    return np.hstack(cols) if cols else np.empty((len(z), 0))


def spec_from_json(doc, z_names) -> ConfounderSpec:
    """Resolve a JSON confounder spec against z column names.

    Categorical bases bind to every encoded column named
    ``base=level``.
    """
    base = tuple(doc["base"])
    expansions = {k: tuple(v) for k, v in doc.get("expansions", {}).items()}
    bindings = {}
    for name in base:
        idx = [i for i, col in enumerate(z_names) if col == name or str(col).startswith(f"{name}=")]
        if not idx:
            raise SchemaError(f"base confounder {name!r} matches no z column")
        bindings[name] = tuple(idx)
    return ConfounderSpec(base_names=base, expansions=expansions, bindings=bindings)


def regress_out(x, design):
    """Least-squares residuals of every column of x on the design.

    An intercept column is always included; collinear design columns are
    dropped with a warning. Residual columns are orthogonal to every
    kept design column.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    design = np.asarray(design, dtype=np.float64)
    if design.ndim == 1:
        design = design.reshape(-1, 1)
    n = x.shape[0]
    if design.shape[0] != n:
        raise ValueError("x and design row counts differ")
    full = np.column_stack([np.ones(n), design])
    if n <= full.shape[1]:
        raise ValueError(f"need n > {full.shape[1]} design columns")
    keep = _independent_columns(full)
    if keep.size < full.shape[1]:
        warnings.warn(
            f"dropped {full.shape[1] - keep.size} collinear design columns",
            RankDeficientWarning,
        )
        full = full[:, keep]
    coef, _, _, _ = np.linalg.lstsq(full, x, rcond=None)
    return x - full @ coef


def confounder_audit(
    x,
    z,
    spec: ConfounderSpec,
    method="rcot",
    method_params=None,
    alpha=0.05,
    seed=0,
    roles="standard",
):
    """Per-confounder residual test; returns name -> p-value plus a
    detail map with statistics and errors.

    ``roles='standard'`` puts the residual block in the feature slot and
    the audited confounder in the outcome slot (scalar confounders) or
    feature slot entries jointly (encoded categoricals enter the test's
    Y-side map as a block). ``roles='swapped'`` exchanges the two.
    """
    if roles not in ("standard", "swapped"):
        raise ValueError("roles must be 'standard' or 'swapped'")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    method_params = dict(method_params or {})
    p_values, details = {}, {}
    for j, name in enumerate(spec.base_names):
        own_block = z[:, list(spec.bindings[name])]
        design = np.column_stack([own_block, _expansion_columns(z, spec, name)])
        rest_idx = sorted(
            i for other in spec.base_names if other != name for i in spec.bindings[other]
        )
        rest = [z[:, rest_idx]]
        rest += [_expansion_columns(z, spec, other) for other in spec.base_names if other != name]
        conditioning = np.hstack(rest)
        try:
            residuals = regress_out(x, design)
            outcome = _audit_test(
                residuals, own_block, conditioning, method, method_params, alpha, seed + j, roles
            )
            p_values[name] = outcome.p_value
            details[name] = {"statistic": outcome.statistic, "error": None}
        except Exception as exc:  # recorded per confounder, not fatal
            p_values[name] = float("nan")
            details[name] = {"statistic": float("nan"), "error": f"{type(exc).__name__}: {exc}"}
    return p_values, details


def _audit_test(residuals, own_block, conditioning, method, method_params, alpha, seed, roles):
    """One audit-step CIT with the chosen role assignment.

    The block-level RCoT path accepts a multi-column outcome side, so
    encoded categorical confounders (and the swapped-role residual
    block) enter jointly; other methods need a scalar outcome slot.
    """
    from dncit.rcot import RcotParams, rcot_test_matrices

    if method == "rcot":
        p = RcotParams(seed=seed, **method_params)
        if roles == "standard":
            return rcot_test_matrices(residuals, own_block, conditioning, p, alpha=alpha)
        return rcot_test_matrices(own_block, residuals, conditioning, p, alpha=alpha)
    if roles == "swapped":
        if residuals.shape[1] != 1:
            raise ValueError("swapped roles need a univariate residual block for this method")
        sample = FeatureSample(x=own_block, y=residuals[:, 0], z=conditioning)
    else:
        if own_block.shape[1] != 1:
            raise ValueError(f"method {method!r} needs a scalar confounder in the outcome slot")
        sample = FeatureSample(x=residuals, y=own_block[:, 0], z=conditioning)
    return run_cit(method, sample, alpha=alpha, seed=seed, **method_params)
