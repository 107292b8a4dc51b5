"""Conditional independence testing for feature representations.

Five tests (RCoT, CPT-KPC, CMIknn, FCIT, Wald) operate on a shared
``FeatureSample`` of features X, scalar outcome Y and encoded
confounders Z, alongside embedding utilities, a simulation harness and
a confounder-control auditor. See README.md for the CLI.
"""

from dncit._core import BACKEND
from dncit.data_model import FeatureSample, TestOutcome, load_sample, standardize_columns

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FeatureSample",
    "TestOutcome",
    "load_sample",
    "standardize_columns",
    "__version__",
]
