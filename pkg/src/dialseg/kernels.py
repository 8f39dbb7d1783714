"""Hot-loop kernels with backend selection at import.

The compiled ``_kernels`` extension is used when it was built; otherwise the
pure-Python twin in ``_kernels_py`` is used. Setting ``DIALSEG_PURE_PYTHON=1``
forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DIALSEG_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def backends() -> dict:
    """All importable implementations, keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        pass
    else:
        out["cython"] = compiled
    return out


depth_scores = _impl.depth_scores
greedy_select = _impl.greedy_select
segment_counts = _impl.segment_counts
