"""Replica-synthesis kernels with backend selection at import time.

The compiled Cython backend is used when available; otherwise the NumPy
reference implementation is selected. Set ``ISACSAR_KERNELS=python`` to
force the fallback (or ``=compiled`` to fail loudly when the extension is
missing). Both backends implement the identical contract and agree to
better than 1e-9 relative; ``benchmarks/bench_kernels.py`` compares their
throughput.
"""

from __future__ import annotations

import os

from . import _ref

_pref = os.environ.get("ISACSAR_KERNELS", "auto").strip().lower()

if _pref in ("python", "ref"):
    _impl = _ref
    BACKEND = "python"
else:
    try:
        from . import _fast as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _pref in ("compiled", "fast"):
            raise ImportError(
                "ISACSAR_KERNELS=compiled but the extension is not built; "
                "reinstall with a working C toolchain or unset the variable"
            )
        _impl = _ref
        BACKEND = "python"

replica_rows = _impl.replica_rows


def get_backend(name: str):
    """Return a backend module by name ('python' or 'compiled')."""
    if name in ("python", "ref"):
        return _ref
    if name in ("compiled", "fast"):
        from . import _fast

        return _fast
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    names = ["python"]
    try:
        from . import _fast  # noqa: F401

        names.append("compiled")
    except ImportError:
        pass
    return names
