from setuptools import Extension, setup

try:
    import numpy  # noqa: F401
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "phased_dmd.kernels._ckernels",
                ["src/phased_dmd/kernels/_ckernels.pyx"],
                extra_compile_args=["-O3", "-fno-math-errno"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
