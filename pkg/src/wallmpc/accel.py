"""Numba acceleration toggle for the hot numeric kernels.

Kernels are compiled with ``numba.njit`` unless the environment variable
``WALLMPC_DISABLE_NUMBA`` is set to a non-empty value other than ``"0"``
(or numba is not importable), in which case the same functions run as
plain numpy. The decision is made once at import time; both paths execute
identical source, so results agree bit for bit.
"""

import os

DISABLE_ENV = "WALLMPC_DISABLE_NUMBA"


def _numba_enabled() -> bool:
    flag = os.environ.get(DISABLE_ENV, "").strip()
    if flag not in ("", "0"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_enabled()

if NUMBA_ENABLED:
    from numba import njit as _njit

    def jit_kernel(fn):
        return _njit(cache=True)(fn)

else:

    def jit_kernel(fn):
        return fn


def python_impl(fn):
    """Return the plain-Python implementation behind a kernel.

    Used by the benchmark to compare the compiled and fallback paths
    without re-importing the package.
    """
    return getattr(fn, "py_func", fn)
