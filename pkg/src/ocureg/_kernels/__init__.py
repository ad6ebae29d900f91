"""Warp kernel backend selection.

Imports the compiled Cython core when it was built, otherwise the numpy
fallback.  Set ``OCUREG_PURE_PYTHON=1`` to force the fallback (used by the
benchmark and the backend-agreement tests).
"""

import os

from . import fallback
from .fallback import warp_points  # noqa: F401  (numpy-only, no compiled twin)

_BACKEND = "numpy"
warp_raster = fallback.warp_raster

if os.environ.get("OCUREG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _warpcore

        warp_raster = _warpcore.warp_raster
        _BACKEND = "compiled"
    except ImportError:
        pass


def backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'numpy'."""
    return _BACKEND
