import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("cfslab._kernels", ["src/cfslab/_kernels.pyx"],
                   include_dirs=[np.get_include()],
                   extra_compile_args=["-O2", "-fcx-fortran-rules"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
