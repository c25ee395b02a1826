"""Build script for the optional compiled training kernel.

The package works without the extension (a pure-numpy backend is selected
at import time); building it just makes micro-sweeps faster.
"""

import os

from setuptools import setup

PYX = "src/frosthpo/microtrainer/_fastloop.pyx"

ext_modules = []
try:
    if not os.path.exists(PYX):
        raise ImportError("kernel source missing")
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "frosthpo.microtrainer._fastloop",
                [PYX],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
