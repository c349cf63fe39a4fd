"""Build script for the compiled aggregation kernels.

Kept alongside pyproject.toml because the Cython extension needs
numpy headers at build time.  The package works without the extension
(glstm_lab.kernels falls back to a numpy implementation), so a failed
compile is not fatal for development installs; delete the ext_modules
line to skip it entirely.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "glstm_lab.kernels._ckernels",
        ["src/glstm_lab/kernels/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
