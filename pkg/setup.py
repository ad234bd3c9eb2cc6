"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure-numpy twin is selected at
import time), so any failure here degrades to the fallback instead of
breaking the install.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "promil._kernels",
                ["src/promil/_kernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    print("Cython not available; installing with the pure-Python kernels only.")

setup(ext_modules=ext_modules)
