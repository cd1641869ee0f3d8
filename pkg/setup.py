import os
import sys

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("RGFWAVE_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("Cython not available; installing pure-Python kernels only", file=sys.stderr)
    else:
        openmp = [] if sys.platform == "darwin" else ["-fopenmp"]
        ext = Extension(
            "rgfwave._kernels",
            ["src/rgfwave/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"] + openmp,
            extra_link_args=openmp,
        )
        ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
