import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LVE_NO_EXTENSION") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install; lve.kernels falls back
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "lve._ckernels",
                    ["src/lve/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
