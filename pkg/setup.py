"""Build the optional compiled kernels.

The package works without them: ``merlin._kernels`` falls back to the pure
Python implementations in ``merlin._fallback`` when the extension is missing.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MERLIN_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "merlin._core",
                    ["src/merlin/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
