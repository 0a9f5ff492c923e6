"""Builds the optional Cython kernel extension.

The package works without the extension: udlflow._kernels falls back to a
pure-numpy implementation at import time. Building with Cython just makes
the branch-and-bound verifier substantially faster on tiny networks.
"""

from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "udlflow._kernels._corex",
                ["src/udlflow/_kernels/_corex.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
