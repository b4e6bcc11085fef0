"""Backend selection for the numerical kernels.

The compiled extension ``diffsurv._ckernels`` is used when importable;
otherwise (or with ``DIFFSURV_PURE_PYTHON=1``) the pure-Python module is
used. Both expose the same functions, so callers import from here only.
"""
import importlib
import os

from . import _pykernels

CONST, IDENT, SIN, SIGNPOW, EXP, SQUARE = (
    _pykernels.CONST,
    _pykernels.IDENT,
    _pykernels.SIN,
    _pykernels.SIGNPOW,
    _pykernels.EXP,
    _pykernels.SQUARE,
)
H_ABS, H_SQUARE, H_POSITIVE, H_EXP = (
    _pykernels.H_ABS,
    _pykernels.H_SQUARE,
    _pykernels.H_POSITIVE,
    _pykernels.H_EXP,
)

_FUNCS = (
    "basis_eval",
    "drift_eval",
    "euler_fill",
    "girsanov_sum",
    "hazard_eval",
    "loglik_nodes",
    "bridge_fill",
)


def load_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None for auto)."""
    if name == "python":
        return _pykernels
    if name is None and os.environ.get("DIFFSURV_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels
    try:
        return importlib.import_module("diffsurv._ckernels")
    except ImportError:
        if name == "cython":
            raise
        return _pykernels


_backend = load_backend()
BACKEND = _backend.BACKEND


def use_backend(name):
    """Switch the active backend for this process (used by the benchmark)."""
    global _backend, BACKEND
    _backend = load_backend(name)
    BACKEND = _backend.BACKEND
    for f in _FUNCS:
        globals()[f] = getattr(_backend, f)
    return _backend


for _f in _FUNCS:
    globals()[_f] = getattr(_backend, _f)
del _f
