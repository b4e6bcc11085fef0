"""Build the optional Cython kernels.

    pip install -e . --no-build-isolation

If Cython or a C compiler is unavailable the package installs without the
extension and falls back to the pure-Python kernels at import.
"""
import os

import numpy
from setuptools import setup
from setuptools.command.build_ext import build_ext

ext_modules = []
if os.environ.get("DIFFSURV_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "diffsurv._ckernels",
                    ["src/diffsurv/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing
            print(f"warning: compiled kernels not built ({exc}); using pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using pure Python")


setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
