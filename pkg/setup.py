"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile only costs speed, not functionality.
"""

import sys

from setuptools import setup


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"stochprox: skipping compiled kernels ({exc})", file=sys.stderr)
        return []
    return cythonize(
        [
            "src/stochprox/_kernels/_core.pyx",
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
        include_path=[numpy.get_include()],
    )


try:
    import numpy

    include_dirs = [numpy.get_include()]
except ImportError:
    include_dirs = []

setup(ext_modules=extensions(), include_dirs=include_dirs)
