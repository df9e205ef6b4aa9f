"""Build the optional Cython kernels.

The package works without them: ``osibench.kernels`` falls back to the numpy
implementations when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("OSIBENCH_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "osibench._kernels",
                    ["src/osibench/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no FMA contraction, no reassociation: sums must match
                    # the numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
