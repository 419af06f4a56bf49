import os

import numpy
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MRFGNN_NO_EXTENSION", "") in ("", "0"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("mrfgnn._kernels", ["src/mrfgnn/_kernels.pyx"],
                   include_dirs=[numpy.get_include()],
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
