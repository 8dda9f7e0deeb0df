"""Build script: compiles the urn-step hot loop as a C extension when Cython
and a compiler are available; the package falls back to the pure-Python twin
(funcurn._kernel_py) at import time otherwise."""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FUNCURN_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "funcurn._kernel",
                    ["src/funcurn/_kernel.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
