from setuptools import setup, Extension
from Cython.Build import cythonize
import numpy as np

# -ffp-contract=off: keep mul/add as separate IEEE float32 roundings so the
# compiled kernels are bit-identical to the numpy fallback.
ext = Extension(
    "dnnshield.kernels._cykernels",
    ["src/dnnshield/kernels/_cykernels.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    extra_compile_args=["-O3", "-ffp-contract=off"],
)

setup(ext_modules=cythonize([ext], language_level="3"))
