import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # the package works without the compiled kernel (numpy fallback)
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "beamlearn.kernels._jacobi",
                ["src/beamlearn/kernels/_jacobi.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )

setup(ext_modules=ext_modules)
