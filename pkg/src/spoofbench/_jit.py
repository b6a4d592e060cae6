"""Numba switch.

Set ``SPOOFBENCH_JIT=0`` to run every kernel through its pure-numpy twin.
When numba is missing the numpy path is used regardless of the flag.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_REQUESTED = os.environ.get("SPOOFBENCH_JIT", "1").strip().lower() not in ("0", "false", "no", "off")
HAVE_NUMBA = numba is not None
JIT_ENABLED = JIT_REQUESTED and HAVE_NUMBA

if HAVE_NUMBA:
    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)
else:  # pragma: no cover
    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f
        return wrapper
