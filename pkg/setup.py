"""Build script for the optional compiled kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes the hot kernels faster. Run
`python setup.py build_ext --inplace` for a dev checkout, or simply
`pip install -e . --no-build-isolation`.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

DIRECTIVES = {
    "language_level": "3",
    "boundscheck": False,
    "wraparound": False,
    "cdivision": True,
    "initializedcheck": False,
}

ext_modules = [
    Extension(
        "pivotgen.kernels._ext",
        sources=["src/pivotgen/kernels/_ext.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # -ffast-math lets GCC vectorize the expf/tanhf loops via libmvec;
        # kernel inputs are max-shifted/finite so the relaxed semantics are safe.
        extra_compile_args=["-O3", "-march=native", "-ffast-math"],
        extra_link_args=["-lmvec", "-lm"],
    )
]

setup(ext_modules=cythonize(ext_modules, compiler_directives=DIRECTIVES))
