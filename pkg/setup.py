"""Build script: compiles the optional extension kernels when Cython is present.

The package is fully functional without the extension; `gctl._backend` falls
back to the numpy kernels at import time.
"""

import os

from setuptools import Extension, setup

ext_modules = []
_pyx = os.path.join("src", "gctl", "_kernels.pyx")
try:
    import numpy
    from Cython.Build import cythonize

    if os.path.exists(_pyx):
        ext_modules = cythonize(
            [
                Extension(
                    "gctl._kernels",
                    [_pyx],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
except ImportError:
    pass

setup(ext_modules=ext_modules)
