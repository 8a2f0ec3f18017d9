"""Build the optional compiled kernels; the package falls back to numpy if this fails."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("LINKSIG_NO_EXTENSIONS") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "linksig.kernels._ckernels",
                    ["src/linksig/kernels/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
