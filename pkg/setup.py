"""Build script: compiles the optional fast-kernel extension.

The extension is marked optional; if Cython or a C++ toolchain is missing
the install still succeeds and the package falls back to the pure-numpy
kernels in ``dncit._core``.
"""

from setuptools import setup
from setuptools.extension import Extension

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "dncit._core._fastkernels",
                ["src/dncit/_core/_fastkernels.pyx"],
                language="c++",
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )
except Exception:
    extensions = []

setup(ext_modules=extensions)
