"""Trial designs and virtual-trial generation.

A design fixes the dose levels, the arm size and the known response
standard deviation. Generators draw per-arm Gaussian responses around a
true shape (or around zero for null trials) and label the result as the
current or the historical trial; historical means are distorted by the
heterogeneity parameters (scale ``true_a``, offset ``true_r``) exactly
the way the borrowing model expects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import SeedSequence, default_rng

from .curvature import DoseGrid
from .posterior import TrialDataset
from .shapes import ShapeSpec, eval_shape

__all__ = [
    "TrialDesign",
    "CURRENT_DOSES",
    "SCENARIO_HISTORICAL_DOSES",
    "build_grid",
    "grid_indices_for",
    "replicate_seed",
    "generate_current_trial",
    "generate_historical_trial",
]

#: Reference five-arm design of the simulation study.
CURRENT_DOSES: tuple[float, ...] = (0.0, 0.15, 0.5, 0.8, 1.0)

#: Historical dose sets per availability scenario; scenario 4 has no
#: historical trial at all.
SCENARIO_HISTORICAL_DOSES: dict[int, tuple[float, ...] | None] = {
    1: CURRENT_DOSES,
    2: (0.0, 0.15, 0.2, 0.8, 1.0),
    3: (0.0, 0.8, 1.0),
    4: None,
}


@dataclass(frozen=True)
class TrialDesign:
    """Dose levels, common arm size and known response sd of one trial."""

    doses: tuple[float, ...]
    n_per_arm: int = 40
    sigma: float = 1.0

    def __post_init__(self) -> None:
        doses = tuple(float(x) for x in self.doses)
        object.__setattr__(self, "doses", doses)
        if len(doses) < 2:
            raise ValueError("design needs at least two dose levels")
        arr = np.asarray(doses)
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("doses must be normalized into [0, 1]")
        if np.any(np.diff(arr) <= 0.0):
            raise ValueError("doses must be strictly increasing")
        if self.n_per_arm < 1:
            raise ValueError(f"n_per_arm must be >= 1, got {self.n_per_arm}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def build_grid(
    current: TrialDesign, historical: TrialDesign | None = None
) -> tuple[DoseGrid, tuple[int, ...], tuple[int, ...] | None]:
    """Union dose grid of both trials plus each trial's index map into it."""
    if historical is None:
        grid = DoseGrid(np.asarray(current.doses))
        return grid, tuple(range(len(current.doses))), None
    union = np.union1d(
        np.round(current.doses, 12), np.round(historical.doses, 12)
    )
    grid = DoseGrid(union)
    return (
        grid,
        grid_indices_for(grid, current.doses),
        grid_indices_for(grid, historical.doses),
    )


def grid_indices_for(grid: DoseGrid, doses: tuple[float, ...]) -> tuple[int, ...]:
    """Positions of ``doses`` inside the grid (exact up to 1e-9)."""
    out = []
    for d in doses:
        hit = np.nonzero(np.abs(grid.doses - d) <= 1e-9)[0]
        if hit.size != 1:
            raise ValueError(f"dose {d!r} not on the grid {grid.doses.tolist()}")
        out.append(int(hit[0]))
    return tuple(out)


def replicate_seed(master_seed: int, replicate: int, stream: int) -> SeedSequence:
    """Deterministic per-replicate, per-stream seed composition.

    Stream 0 is the current trial, stream 1 the historical one. The
    composition is order-free, so replicates can be generated in any
    schedule (serial, chunked, parallel) with identical output.
    """
    return SeedSequence([int(master_seed), int(replicate), int(stream)])


def _draw(
    means: np.ndarray, design: TrialDesign, seed: SeedSequence | int
) -> list[np.ndarray]:
    rng = default_rng(seed)
    return [
        m + design.sigma * rng.standard_normal(design.n_per_arm) for m in means
    ]


def generate_current_trial(
    shape: ShapeSpec | None,
    design: TrialDesign,
    seed: SeedSequence | int,
    grid: DoseGrid | None = None,
) -> TrialDataset:
    """Draw one current trial around ``shape`` (or around zero if None).

    ``grid`` defaults to the design's own doses; pass the union grid
    when the dataset will be fit jointly with a historical trial.
    """
    doses = np.asarray(design.doses)
    means = np.asarray(eval_shape(shape, doses)) if shape else np.zeros(doses.size)
    grid = grid or DoseGrid(doses)
    return TrialDataset(
        kind="current",
        grid_indices=grid_indices_for(grid, design.doses),
        responses=tuple(_draw(means, design, seed)),
        sigma=design.sigma,
    )


def generate_historical_trial(
    shape: ShapeSpec | None,
    design: TrialDesign,
    seed: SeedSequence | int,
    true_a: float = 1.0,
    true_r: float = 0.0,
    grid: DoseGrid | None = None,
) -> TrialDataset:
    """Draw one historical trial with heterogeneity (a, r) applied.

    Arm means are a * f(dose) - r, matching the borrowing model's
    historical likelihood when the fitted (a, r) equal the true ones.
    """
    doses = np.asarray(design.doses)
    base = np.asarray(eval_shape(shape, doses)) if shape else np.zeros(doses.size)
    means = true_a * base - true_r
    grid = grid or DoseGrid(doses)
    return TrialDataset(
        kind="historical",
        grid_indices=grid_indices_for(grid, design.doses),
        responses=tuple(_draw(means, design, seed)),
        sigma=design.sigma,
    )
