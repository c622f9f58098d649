"""Numba shim.

Hot kernels are compiled with numba when it is importable and the environment
variable ``DISCUS_NUMBA`` is not set to ``0``. Otherwise every kernel runs its
pure-numpy twin, which computes the same values.
"""
import os
import warnings

_flag = os.environ.get("DISCUS_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    if not _requested:
        raise ImportError
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:
    if _requested:
        warnings.warn("numba is not installed - falling back to numpy kernels")
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
