"""Builds the optional compiled kernel core; metadata lives in pyproject.toml."""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install, numpy fallback is used
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("stempredict._kernels", ["src/stempredict/_kernels.pyx"])],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
