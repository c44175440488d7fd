"""Objective kernel backend selection.

The compiled Cython kernel is preferred when its extension module was
built; otherwise the pure numpy fallback takes over. Both implement the
same contract (``prepare`` then ``value_and_grad``) and agree to float
precision, though not bit-for-bit (summation order differs). Set
``DOSECURVE_KERNEL`` to ``cython`` or ``numpy`` to force a backend
before the package is imported; ``auto`` (default) prefers compiled.
"""

from __future__ import annotations

import os
from typing import Any, Callable

import numpy as np
from numpy.typing import NDArray

from . import _kernel_numpy
from .posterior import PackedObjective

try:
    from . import _kernel_cy
except ImportError:
    _kernel_cy = None

__all__ = ["active_backend", "prepare", "value_and_grad", "make_objective"]


def _choose() -> tuple[str, Any]:
    name = os.environ.get("DOSECURVE_KERNEL", "auto")
    if name not in ("auto", "cython", "numpy"):
        raise ValueError(
            f"DOSECURVE_KERNEL must be auto, cython or numpy, got {name!r}"
        )
    if name == "cython" and _kernel_cy is None:
        raise ImportError(
            "DOSECURVE_KERNEL=cython but the compiled kernel is not built"
        )
    if name != "numpy" and _kernel_cy is not None:
        return "cython", _kernel_cy
    return "numpy", _kernel_numpy


_BACKEND_NAME, _BACKEND = _choose()


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _BACKEND_NAME


def prepare(packed: PackedObjective) -> Any:
    """Bind a packed objective into a backend evaluation handle."""
    return _BACKEND.prepare(packed)


def value_and_grad(handle: Any, v: NDArray) -> tuple[float, NDArray]:
    """Log-posterior and analytic gradient at unconstrained vector ``v``."""
    return _BACKEND.value_and_grad(handle, v)


def make_objective(packed: PackedObjective) -> Callable[[NDArray], tuple[float, NDArray]]:
    """Closure over a prepared handle, for optimizer callbacks."""
    handle = prepare(packed)

    def fun(v: NDArray) -> tuple[float, NDArray]:
        return value_and_grad(handle, np.asarray(v, dtype=float))

    return fun
