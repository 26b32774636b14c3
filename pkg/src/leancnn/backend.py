"""Kernel backend selection: numba @njit loops or the pure-numpy fallback.

The active backend comes from the LEANCNN_BACKEND environment variable:

    LEANCNN_BACKEND=auto    numba when importable, else numpy (default)
    LEANCNN_BACKEND=numba   require numba, error if missing
    LEANCNN_BACKEND=numpy   force the pure-numpy path

Both backends are bit-identical; see `leancnn bench --kernels` for a speed
comparison.  set_backend() overrides the environment at runtime (tests and
benchmarks use it).
"""

import os

from .errors import ConfigError

_CHOICES = ("auto", "numba", "numpy")
_active_name = None
_active_module = None


def _numba_importable():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _load(name):
    if name == "auto":
        name = "numba" if _numba_importable() else "numpy"
    if name == "numpy":
        from . import kernels_numpy as mod
    elif name == "numba":
        if not _numba_importable():
            raise ConfigError("kernel backend 'numba' requested but numba is not installed")
        from . import kernels_numba as mod
    else:
        raise ConfigError(
            f"unknown kernel backend {name!r}; expected one of {', '.join(_CHOICES)}"
        )
    return name, mod


def set_backend(name=None):
    """Select the kernel backend; None re-reads LEANCNN_BACKEND."""
    global _active_name, _active_module
    if name is None:
        name = os.environ.get("LEANCNN_BACKEND", "auto")
    _active_name, _active_module = _load(name)
    return _active_name


def active_name():
    if _active_name is None:
        set_backend()
    return _active_name


def kernels():
    """The module providing im2col / col2im / maxpool2x2 / maxpool2x2_backward."""
    if _active_module is None:
        set_backend()
    return _active_module
