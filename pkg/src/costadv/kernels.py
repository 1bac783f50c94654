"""Select the compiled kernels when available, else the pure-Python ones.

Set ``COSTADV_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("COSTADV_PURE_PYTHON") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

fictitious_play_steps = _impl.fictitious_play_steps

__all__ = ["BACKEND", "fictitious_play_steps"]
