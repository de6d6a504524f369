"""Kernel backend selection.

The compiled extension is used when importable; set ``KOROBOV_RELU_BACKEND``
to ``python`` to force the scipy fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("KOROBOV_RELU_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"


def get_kernels(name: str | None = None):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels as compiled  # type: ignore[attr-defined]

        return compiled
    raise ValueError(f"unknown backend {name!r}")
