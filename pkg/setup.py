import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("GRIDLOCK_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "gridlock._kernels",
                ["src/gridlock/_kernels.pyx"],
                extra_compile_args=["-O2", "-ffp-contract=off", "-fno-builtin"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
