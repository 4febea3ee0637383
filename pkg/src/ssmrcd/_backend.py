"""Kernel backend selection.

The compiled extension is preferred when importable; ``SSMRCD_BACKEND`` can
force a choice ("compiled" | "python" | "auto"). Shared selection helpers that
do not benefit from compilation live here.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_requested = os.environ.get("SSMRCD_BACKEND", "auto").lower()

if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(f"SSMRCD_BACKEND must be auto|compiled|python, got {_requested!r}")

if _requested == "python":
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels_cy as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise RuntimeError("SSMRCD_BACKEND=compiled but the extension is not built")
        kernels = _kernels_py
        BACKEND = "python"


def backend_name() -> str:
    """Name of the kernel backend selected at import ("compiled" or "python")."""
    return BACKEND


def h_smallest(values, h):
    """Indices of the h smallest values, ties broken by ascending index.

    Returned sorted ascending, the canonical subset representation used for
    convergence checks.
    """
    order = np.argsort(values, kind="stable")[:h]
    return np.sort(order)
