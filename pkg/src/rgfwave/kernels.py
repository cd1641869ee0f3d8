"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``RGFWAVE_PURE_PYTHON`` is set to a non-empty value
other than ``0``, the numpy fallback is used.  Both backends expose
``history_sum`` (marching history convolution) and ``retarded_eval``
(retarded-time solve plus free-field quotients).
"""

import os

from . import _kernels_py

BACKEND = "python"
_active = _kernels_py

if os.environ.get("RGFWAVE_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels

        _active = _kernels
        BACKEND = "cython"
    except ImportError:
        pass

history_sum = _active.history_sum
retarded_eval = _active.retarded_eval


def get_backend(name=None):
    """Return ``(name, module)`` for ``"cython"``, ``"python"`` or the active default."""
    if name is None:
        return BACKEND, _active
    if name == "python":
        return "python", _kernels_py
    if name == "cython":
        from . import _kernels

        return "cython", _kernels
    raise ValueError(f"unknown backend {name!r}")
