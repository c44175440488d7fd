"""Discrete curvature of a curve sampled on an irregular dose grid.

The smoothness penalty is the L2 norm of second differences: at each
interior grid point a three-point stencil estimates the second
derivative, and the squared estimates are integrated with midpoint-rule
weights whose total mass equals the grid span. Affine sequences have
zero curvature by construction, which is what lets the default-model
transform decide what "no curvature" means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

__all__ = ["DoseGrid", "second_difference", "total_curvature"]


@dataclass(frozen=True)
class DoseGrid:
    """Strictly increasing normalized dose levels x_0 < ... < x_M in [0, 1]."""

    doses: NDArray

    def __post_init__(self) -> None:
        arr = np.array(self.doses, dtype=float).reshape(-1)
        arr.flags.writeable = False
        object.__setattr__(self, "doses", arr)
        if arr.size < 2:
            raise ValueError(f"grid needs at least two doses, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("doses must be finite")
        if arr[0] < 0.0 or arr[-1] > 1.0:
            raise ValueError(f"doses must lie in [0, 1], got {arr[0]}..{arr[-1]}")
        if np.any(np.diff(arr) <= 0.0):
            raise ValueError("doses must be strictly increasing")

    @property
    def m(self) -> int:
        """Index of the top dose (grid has m + 1 points)."""
        return self.doses.size - 1

    @property
    def n_interior(self) -> int:
        return max(self.doses.size - 2, 0)

    def stencil(self) -> tuple[NDArray, NDArray]:
        """Per-interior-point stencil coefficients (a_i, b_i).

        The second difference at interior point i is
        a_i * z[i+1] - (a_i + b_i) * z[i] + b_i * z[i-1].
        """
        x = self.doses
        span = x[2:] - x[:-2]
        a = 2.0 / ((x[2:] - x[1:-1]) * span)
        b = 2.0 / ((x[1:-1] - x[:-2]) * span)
        return a, b

    def weights(self) -> NDArray:
        """Integration weights for the interior points; they sum to the span.

        Interior points own the midpoint-to-midpoint cell around them;
        the first and last interior cells absorb the end gaps. A single
        interior point (m = 2) owns the whole span. Recomputed on each
        call from the doses, never cached.
        """
        x = self.doses
        k = self.n_interior
        if k == 0:
            return np.zeros(0)
        if k == 1:
            return np.array([x[2] - x[0]])
        w = np.empty(k)
        w[1:-1] = (x[3:-1] - x[1:-3]) / 2.0
        w[0] = (x[2] + x[1]) / 2.0 - x[0]
        w[-1] = x[-1] - (x[-2] + x[-3]) / 2.0
        return w


def second_difference(z: NDArray, grid: DoseGrid, i: int) -> float:
    """Three-point second-derivative estimate of ``z`` at interior point ``i``.

    ``i`` is the grid index and must satisfy 1 <= i <= m - 1.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != grid.doses.shape:
        raise ValueError(
            f"z has length {z.size}, grid has {grid.doses.size} points"
        )
    if not 1 <= i <= grid.m - 1:
        raise ValueError(f"interior index must be in [1, {grid.m - 1}], got {i}")
    x = grid.doses
    span = x[i + 1] - x[i - 1]
    left = (z[i] - z[i - 1]) / ((x[i] - x[i - 1]) * span)
    right = (z[i + 1] - z[i]) / ((x[i + 1] - x[i]) * span)
    return float(2.0 * (right - left))


def total_curvature(z: NDArray, grid: DoseGrid) -> float:
    """Root of the weighted sum of squared second differences of ``z``.

    Returns 0 for grids with fewer than three points (no interior point
    carries a stencil).
    """
    z = np.asarray(z, dtype=float)
    if z.shape != grid.doses.shape:
        raise ValueError(
            f"z has length {z.size}, grid has {grid.doses.size} points"
        )
    if grid.n_interior == 0:
        return 0.0
    a, b = grid.stencil()
    d = a * z[2:] - (a + b) * z[1:-1] + b * z[:-2]
    return float(np.sqrt(np.sum(d * d * grid.weights())))
