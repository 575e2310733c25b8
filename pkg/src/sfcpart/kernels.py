"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``SFCPART_PURE=1`` to force the pure-Python fallback.
"""

import os

from . import _kernels_py

if os.environ.get("SFCPART_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"

quantize_interleave = _impl.quantize_interleave
range_bbox = _impl.range_bbox
partition_range = _impl.partition_range
knapsack_floor = _impl.knapsack_floor
window_reach = _impl.window_reach


def backends():
    """Return ``{name: module}`` for every importable kernel implementation."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        out["compiled"] = _kernels
    return out
