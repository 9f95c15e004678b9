"""Build script. The compiled kernel extension is optional: without Cython or a
C compiler the package installs pure-Python and selects the numpy backend at
import time. Build the extension in place with:

    python setup.py build_ext --inplace

Set RINGSIM_NO_EXT=1 to skip the extension build entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("RINGSIM_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ringsim._kernels",
                    ["src/ringsim/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
