"""Build script: compiles the pairwise-assembly core unless PERIDYN_OC_NO_EXT=1.

The compiled extension is optional: if Cython or a C compiler is missing the
package installs anyway and falls back to the pure-NumPy assembly backend.
"""

import os
import sys

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("PERIDYN_OC_NO_EXT", "0") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext = Extension(
            "peridyn_oc._accel",
            sources=["src/peridyn_oc/_accel.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError as exc:  # pragma: no cover - build-environment dependent
        sys.stderr.write(
            "peridyn-oc: compiled backend skipped (%s); "
            "the pure-Python backend will be used\n" % exc
        )

setup(ext_modules=ext_modules)
