"""Build hook for the optional compiled kernel.

The extension is skipped when Cython or a C compiler is unavailable; the
package then runs on its numpy fallback.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "minflow._kernels._core",
                ["src/minflow/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3},
        quiet=True,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
