"""Kernel selection: compiled extension if importable, pure Python otherwise.

``GRIDLOCK_BACKEND=python`` forces the fallback; ``=compiled`` makes a
missing extension an import-time error instead of a silent fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python")


def available() -> tuple[str, ...]:
    return BACKENDS if _compiled is not None else ("python",)


def get(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` (``None``: environment / auto)."""
    name = name or os.environ.get("GRIDLOCK_BACKEND", "auto")
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("gridlock._kernels is not built; run `pip install -e .`")
        return _compiled
    if name != "auto":
        raise ValueError(f"unknown backend {name!r}")
    return _compiled if _compiled is not None else _kernels_py


def name_of(mod: ModuleType) -> str:
    return "python" if mod is _kernels_py else "compiled"
