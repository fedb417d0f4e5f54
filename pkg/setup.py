"""Build hook for the optional compiled segment-reduction kernels.

The package works without the extension: ``amlgraph.kernels`` falls back to
the numpy implementation when the compiled module is absent (or when
``AMLGRAPH_KERNELS=numpy`` is set).  Set ``AMLGRAPH_SKIP_EXT=1`` to skip
compilation entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("AMLGRAPH_SKIP_EXT", "0") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "amlgraph.kernels._segment_cy",
                    ["src/amlgraph/kernels/_segment_cy.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython at build time: ship pure python, fallback kicks in.
        ext_modules = []

setup(ext_modules=ext_modules)
