import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# No -ffast-math and no FMA contraction: the kernels must reproduce the
# sequential float32 accumulation order of the pure-Python fallback bit for bit.
extensions = [
    Extension(
        "slamp._kernels",
        ["src/slamp/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
