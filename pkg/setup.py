"""Builds the optional Cython kernel extension.

The package works without it (a numpy fallback is selected at import time),
so the extension is marked optional: a failed compile degrades to the pure
Python install instead of aborting.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "logitshift.kernels._convpool",
                ["src/logitshift/kernels/_convpool.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
