from setuptools import setup

try:
    from Cython.Build import cythonize
except ImportError:  # the package falls back to pure Python kernels
    ext_modules = []
else:
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("mfgc._sweep_ext", ["src/mfgc/_sweep.pyx"], extra_compile_args=["-O3"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
