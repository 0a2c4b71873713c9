"""Moment-system kernels with a numba fast path and a pure-numpy fallback.

The backend is read once from the ``MEDROBUST_BACKEND`` environment variable
(``numba`` or ``numpy``; default ``numba`` when importable). ``set_backend``
switches it at run time, mainly for tests and the benchmark.
"""

import os
import warnings

from . import _numpy

_NUMBA = None
BACKENDS = ("numba", "numpy")


def _load_numba():
    global _NUMBA
    if _NUMBA is None:
        from . import _numba

        _NUMBA = _numba
    return _NUMBA


def _initial_backend():
    requested = os.environ.get("MEDROBUST_BACKEND", "numba").strip().lower()
    if requested not in BACKENDS:
        warnings.warn(f"unknown MEDROBUST_BACKEND={requested!r}; using numpy", RuntimeWarning)
        return "numpy"
    if requested == "numba":
        try:
            _load_numba()
        except ImportError:
            return "numpy"
    return requested


_backend = _initial_backend()


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select the kernel backend and return the previous one."""
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    if name == "numba":
        _load_numba()
    previous, _backend = _backend, name
    return previous


def mr_system(y, a, m, xp, xg, xr, xh, beta, pi_logistic, rho_log):
    impl = _NUMBA if _backend == "numba" else _numpy
    return impl.mr_system(y, a, m, xp, xg, xr, xh, beta, bool(pi_logistic), bool(rho_log))


def ps_system(y, a, m, xp, xh, beta, pi_logistic):
    impl = _NUMBA if _backend == "numba" else _numpy
    return impl.ps_system(y, a, m, xp, xh, beta, bool(pi_logistic))


hines_system = _numpy.hines_system
bk_system = _numpy.bk_system
mr_int_system = _numpy.mr_int_system
