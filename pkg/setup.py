import sys

from setuptools import Extension, setup

# The compiled energy kernel is optional: if Cython or a C compiler is
# missing, the package still installs and falls back to the NumPy
# implementation selected at import time in shelab.energy_backend.
ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "shelab._energy",
                ["src/shelab/_energy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
    )
except Exception as exc:  # pragma: no cover
    sys.stderr.write(f"shelab: skipping compiled energy kernel ({exc})\n")

setup(ext_modules=ext_modules)
