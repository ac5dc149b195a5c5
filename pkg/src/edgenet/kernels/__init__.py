"""Backend selection for the numeric hot kernels.

Two interchangeable implementations exist: ``nb_backend`` (numba @njit)
and ``np_backend`` (pure numpy). The EDGE_BACKEND environment variable
picks one at import time:

    EDGE_BACKEND=numba   force the jit kernels (error if numba missing)
    EDGE_BACKEND=numpy   force the pure-numpy fallback
    unset                numba when importable, numpy otherwise

``benchmarks/bench_backends.py`` times the two side by side.
"""

from __future__ import annotations

import os

_requested = os.environ.get("EDGE_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(f"EDGE_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    from . import np_backend as _impl

    BACKEND = "numpy"
elif _requested == "numba":
    from . import nb_backend as _impl

    BACKEND = "numba"
else:
    try:
        from . import nb_backend as _impl

        BACKEND = "numba"
    except ImportError:
        from . import np_backend as _impl

        BACKEND = "numpy"

conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd = _impl.conv2d_bwd
depthwise3x3_fwd = _impl.depthwise3x3_fwd
local_attn_fwd = _impl.local_attn_fwd
local_attn_bwd = _impl.local_attn_bwd
bilinear_fwd = _impl.bilinear_fwd
bilinear_bwd = _impl.bilinear_bwd
nms_thin = _impl.nms_thin
greedy_match = _impl.greedy_match

__all__ = [
    "BACKEND",
    "conv2d_fwd",
    "conv2d_bwd",
    "depthwise3x3_fwd",
    "local_attn_fwd",
    "local_attn_bwd",
    "bilinear_fwd",
    "bilinear_bwd",
    "nms_thin",
    "greedy_match",
]
