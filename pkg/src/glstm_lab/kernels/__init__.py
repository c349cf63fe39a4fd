"""Aggregation kernels with backend selection at import time.

The compiled Cython extension is preferred; the numpy reference takes
over when the extension is missing (source checkout without a build) or
when GLSTM_LAB_KERNELS=fallback is set, which the benchmark and the
cross-backend tests use to force a specific implementation.
"""

from __future__ import annotations

import os

from . import numpy_ref

_forced = os.environ.get("GLSTM_LAB_KERNELS", "")

if _forced == "fallback":
    _impl = numpy_ref
    BACKEND = "fallback"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = numpy_ref
        BACKEND = "fallback"

seg_sum = _impl.seg_sum
seg_dot = _impl.seg_dot
seg_max = _impl.seg_max
seg_max_backward = _impl.seg_max_backward
scatter_rows = _impl.scatter_rows


def backend_name() -> str:
    return BACKEND
