"""Backend selection for the batched solve/VJP kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``ROOTLIFT_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _kernels_py

COND_MAX = 1e12

if os.environ.get("ROOTLIFT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _dgpcore as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def solve_batch(rays, rhs, w, cond_max=COND_MAX):
    return _impl.solve_batch(rays, rhs, w, cond_max)


def vjp_batch(rays, rhs, w, t, g, cond_max=COND_MAX):
    return _impl.vjp_batch(rays, rhs, w, t, g, cond_max)
