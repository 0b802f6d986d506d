"""Build script for the optional compiled inner-loop kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs performance.
"""
import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cranpower._inner_c",
                ["src/cranpower/_inner_c.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
