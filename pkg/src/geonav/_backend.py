"""Select the compiled kernels when available, else the pure-Python fallback.

Set ``GEONAV_PURE_PYTHON=1`` to force the fallback.
"""
import os

from geonav import _fallback

if os.environ.get("GEONAV_PURE_PYTHON", "") not in ("", "0"):
    kernels = _fallback
    BACKEND = "python"
else:
    try:
        from geonav import _kernels as kernels
        BACKEND = "compiled"
    except ImportError:
        kernels = _fallback
        BACKEND = "python"

footprint_sum = kernels.footprint_sum
geodesic_field = kernels.geodesic_field
row_prefix = kernels.row_prefix
