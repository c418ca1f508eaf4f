"""Backend selection for the compiled kernels.

``HUCAI_NUMBA`` controls the choice at import time:

* ``auto`` (default): use numba when it imports cleanly
* ``1``/``true``/``yes``: request numba (falls back silently if missing)
* ``0``/``false``/``no``: force the pure-numpy path
"""

from __future__ import annotations

import os

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        """No-op stand-in when numba is not importable."""

        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator


def _resolve(flag: str) -> bool:
    flag = flag.strip().lower()
    if flag == "auto":
        return NUMBA_AVAILABLE
    if flag in ("1", "true", "yes", "on"):
        return NUMBA_AVAILABLE
    if flag in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"HUCAI_NUMBA must be auto/1/0, got {flag!r}")


USE_NUMBA = _resolve(os.environ.get("HUCAI_NUMBA", "auto"))

__all__ = ["njit", "NUMBA_AVAILABLE", "USE_NUMBA"]
