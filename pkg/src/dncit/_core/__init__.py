"""Hot-kernel backend selection.

Imports the compiled extension when it built successfully, otherwise the
pure-numpy fallback. ``BACKEND`` reports which one is active; both expose
the same functions with bitwise-identical results (see tests and
``benchmarks/bench_backends.py``).

Set ``DNCIT_FORCE_NUMPY=1`` to skip the compiled path, e.g. to measure
the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("DNCIT_FORCE_NUMPY"):
    _impl = _kernels_py
else:
    try:
        from . import _fastkernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND

chebyshev_distances = _impl.chebyshev_distances
sq_euclidean_distances = _impl.sq_euclidean_distances
brute_knn = _impl.brute_knn
cmi_counts_conditional = _impl.cmi_counts_conditional
cmi_counts_unconditional = _impl.cmi_counts_unconditional
restricted_permutation = _impl.restricted_permutation

__all__ = [
    "BACKEND",
    "chebyshev_distances",
    "sq_euclidean_distances",
    "brute_knn",
    "cmi_counts_conditional",
    "cmi_counts_unconditional",
    "restricted_permutation",
]
