"""Single dispatch point mapping method names to test runners."""

from __future__ import annotations

from dncit.cmiknn import CmiParams, cmiknn_test
from dncit.cpt_kpc import KpcParams, cpt_kpc_test
from dncit.data_model import METHODS, FeatureSample, TestOutcome
from dncit.prediction import FcitParams, fcit_test
from dncit.rcot import RcotParams, rcot_test
from dncit.wald import wald_test


def run_cit(method, sample: FeatureSample, alpha=0.05, seed=0, **params) -> TestOutcome:
    """Run one conditional independence test by name.

    ``params`` are forwarded into the method's parameter dataclass
    (unknown keys raise TypeError); ``seed`` feeds every stochastic
    component.
    """
    if method == "rcot":
        return rcot_test(sample, RcotParams(seed=seed, **params), alpha=alpha)
    if method == "cpt_kpc":
        return cpt_kpc_test(sample, KpcParams(seed=seed, **params), alpha=alpha)
    if method == "cmiknn":
        return cmiknn_test(sample, CmiParams(seed=seed, **params), alpha=alpha)
    if method == "fcit":
        return fcit_test(sample, FcitParams(seed=seed, **params), alpha=alpha)
    if method == "wald":
        return wald_test(sample, alpha=alpha, seed=seed, **params)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
