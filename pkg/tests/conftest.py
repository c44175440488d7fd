"""Shared builders for the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from dosecurve.curvature import DoseGrid
from dosecurve.posterior import ObjectiveSpec, PriorSet, TrialDataset
from dosecurve.trials import TrialDesign, build_grid, generate_current_trial, \
    generate_historical_trial, replicate_seed

CURRENT = TrialDesign((0.0, 0.15, 0.5, 0.8, 1.0), 8, 1.0)
HISTORICAL = TrialDesign((0.0, 0.15, 0.2, 0.8, 1.0), 8, 1.0)


def make_spec(
    model_kind: str = "identity",
    borrow: bool = False,
    seed: int = 0,
    tau: float | None = None,
    sign: str = "paper",
    fix_placebo: bool = False,
    free_e0: bool = False,
    current: TrialDesign = CURRENT,
    historical: TrialDesign = HISTORICAL,
) -> ObjectiveSpec:
    """A small random-data objective; deterministic in ``seed``."""
    grid, _, _ = build_grid(current, historical if borrow else None)
    data_c = generate_current_trial(None, current, replicate_seed(seed, 0, 0), grid)
    data_h = None
    if borrow:
        data_h = generate_historical_trial(
            None, historical, replicate_seed(seed, 0, 1), 1.0, 0.0, grid
        )
    if tau is None:
        tau = 3.0 if model_kind == "identity" else 0.5
    extra = {"e0_mean": 0.0, "e0_sd": 0.3} if free_e0 else {}
    return ObjectiveSpec(
        grid=grid,
        model_kind=model_kind,
        priors=PriorSet(tau=tau, curvature_prior_sign=sign, **extra),
        data_current=data_c,
        data_historical=data_h,
        fix_placebo=fix_placebo,
    )


def simple_dataset(
    kind: str, means, n: int = 6, sigma: float = 1.0, seed: int = 0
) -> TrialDataset:
    """One response array per mean, drawn around it."""
    rng = np.random.default_rng(seed)
    means = np.asarray(means, dtype=float)
    return TrialDataset(
        kind=kind,
        grid_indices=tuple(range(means.size)),
        responses=tuple(m + sigma * rng.standard_normal(n) for m in means),
        sigma=sigma,
    )


@dataclass(frozen=True)
class FitStub:
    """Just the two fields the curve readers consume."""

    mu_hat: np.ndarray
    doses: np.ndarray


def fit_stub(doses, mu) -> FitStub:
    return FitStub(mu_hat=np.asarray(mu, dtype=float), doses=np.asarray(doses, dtype=float))


@pytest.fixture()
def cache_dir(tmp_path):
    d = tmp_path / "cache"
    d.mkdir()
    return d
