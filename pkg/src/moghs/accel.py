"""Numba/NumPy lane selection for the hot numeric kernels.

The simulator and MPPI rollout loops are written as plain-Python array code
and compiled with numba when available.  Setting ``MOGHS_DISABLE_NUMBA=1``
(before first import) selects the uncompiled pure-NumPy lane; the same
source runs in both lanes, so results agree.  ``MOGHS_NUM_THREADS`` caps the
numba thread pool.
"""

import os

_TRUTHY = ("1", "true", "yes", "on")


def _numba_requested() -> bool:
    return os.environ.get("MOGHS_DISABLE_NUMBA", "").strip().lower() not in _TRUTHY


def _init():
    if _numba_requested():
        try:
            import numba

            threads = os.environ.get("MOGHS_NUM_THREADS", "").strip()
            if threads:
                numba.set_num_threads(max(1, int(threads)))
            return True, numba.njit
        except ImportError:
            pass

    def njit(*args, **kwargs):
        # mirror numba's decorator signature: bare and parametrized use
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap

    return False, njit


NUMBA_ENABLED, njit = _init()


def py_func(kernel):
    """Uncompiled original of a kernel (itself when the numpy lane is active)."""
    return getattr(kernel, "py_func", kernel)
