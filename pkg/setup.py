import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("FAIRPPO_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python fallback is selected at import time
        cythonize = None
    if cythonize is not None:
        ext = Extension(
            "fairppo._kernels",
            ["src/fairppo/_kernels.pyx"],
            include_dirs=[np.get_include()],
            # keep IEEE semantics identical to the numpy fallback
            extra_compile_args=["-O2", "-ffp-contract=off"],
        )
        ext_modules = cythonize(
            [ext],
            compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
        )

setup(ext_modules=ext_modules)
