"""Build script: compiles the optional replica-synthesis extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so any failure here downgrades to a pure-Python
build instead of aborting the install.
"""

from setuptools import setup


def _extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("isacsar: Cython unavailable, building without compiled kernels")
        return []
    try:
        return cythonize(
            ["src/isacsar/kernels/_fast.pyx"],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover - toolchain specific
        print(f"isacsar: skipping compiled kernels ({exc})")
        return []


setup(ext_modules=_extensions())
