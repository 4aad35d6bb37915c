"""Build the optional compiled unroll kernel.

pip install -e . --no-build-isolation
python setup.py build_ext --inplace

If Cython or a C compiler is missing the package installs without the
extension and falls back to the pure-Python kernel at import time.
"""

import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("DMPCOUPLE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "dmpcouple._kernels",
                    ["src/dmpcouple/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError as exc:  # pragma: no cover
        print(f"building without compiled kernel: {exc}", file=sys.stderr)

setup(ext_modules=ext_modules)
