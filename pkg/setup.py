"""Build script: compiles the optional warp kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so the build is marked optional and a failed compile only
prints a warning.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    import numpy

    ext_modules = cythonize(
        [
            Extension(
                "ocureg._kernels._warpcore",
                ["src/ocureg/_kernels/_warpcore.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
    for ext in ext_modules:
        ext.optional = True
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
