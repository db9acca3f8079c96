"""Build script for the optional compiled kernel core.

The package works without the extension (a pure-Python kernel backend is
selected at import time), so compilation failures are not fatal unless
PROGRESSRL_REQUIRE_C=1 is set.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain
            self._fail_or_warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._fail_or_warn(exc)

    @staticmethod
    def _fail_or_warn(exc):
        if os.environ.get("PROGRESSRL_REQUIRE_C") == "1":
            raise
        sys.stderr.write(
            f"warning: compiled kernels unavailable ({exc}); "
            "falling back to the pure-Python backend\n"
        )


def extensions():
    if cythonize is None:
        return []
    ext = Extension(
        "progressrl._speedups",
        sources=["src/progressrl/_speedups.pyx"],
        # -ffp-contract=off: no FMA contraction, so float results are
        # bit-identical to the pure-Python backend's operation order.
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    cmdclass={"build_ext": OptionalBuildExt},
    ext_modules=extensions(),
)
