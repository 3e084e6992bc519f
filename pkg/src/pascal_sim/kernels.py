"""Kernel selection: the compiled extension when importable, else pure Python.

``BACKEND`` names the active implementation; set ``PASCAL_SIM_PURE_PYTHON=1``
to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py
from ._kernels_py import term_count

__all__ = ["BACKEND", "odometer_moment", "term_count", "python_odometer_moment"]

python_odometer_moment = _kernels_py.odometer_moment

if os.environ.get("PASCAL_SIM_PURE_PYTHON", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    odometer_moment = _compiled.odometer_moment
else:
    BACKEND = "python"
    odometer_moment = _kernels_py.odometer_moment
