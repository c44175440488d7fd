"""Proof-of-concept testing and MED estimation on fitted curves.

The test statistic is the largest fitted active-dose effect over the
fitted placebo mean. Its null distribution has no usable closed form
under the curvature prior, so critical values come from Monte Carlo
calibration: simulate flat-curve trials, fit each one exactly like the
real analysis, and take the smallest threshold whose empirical
exceedance stays below alpha. Calibrations are cached on disk keyed by
a fingerprint of everything that influences the null distribution.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .posterior import ObjectiveSpec, PriorSet
from .solver import MapFit, SolverOptions, map_fit
from .trials import (
    TrialDesign,
    build_grid,
    generate_current_trial,
    generate_historical_trial,
    replicate_seed,
)

__all__ = [
    "MedSpec",
    "MedEstimate",
    "CalibrationSetup",
    "CalibrationResult",
    "test_statistic",
    "detect_poc",
    "interpolate_curve",
    "estimate_med",
    "calibrate_critical_value",
    "load_cached_calibration",
    "critical_value_from_stats",
    "resolve_cache_dir",
]

CACHE_SCHEMA = 1

MED_REFERENCES = ("estimated", "zero")


def test_statistic(fit: MapFit) -> float:
    """Largest fitted active-dose mean minus the fitted placebo mean."""
    mu = fit.mu_hat
    return float(mu[1:].max() - mu[0])


def detect_poc(fit: MapFit, critical_value: float) -> bool:
    """Proof-of-concept flag: statistic strictly above the critical value."""
    return test_statistic(fit) > critical_value


def interpolate_curve(fit: MapFit, x: float | NDArray) -> float | NDArray:
    """Piecewise-linear interpolation of the fitted means at dose ``x``.

    Refuses to extrapolate outside the fitted dose range.
    """
    doses = fit.doses
    arr = np.asarray(x, dtype=float)
    if arr.size and (arr.min() < doses[0] - 1e-12 or arr.max() > doses[-1] + 1e-12):
        raise ValueError(
            f"dose outside the fitted range [{doses[0]}, {doses[-1]}]"
        )
    out = np.interp(np.clip(arr, doses[0], doses[-1]), doses, fit.mu_hat)
    if np.ndim(x) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class MedSpec:
    """MED definition: effect threshold and what the effect is over.

    ``reference="estimated"`` measures effects against the fitted
    placebo mean; ``"zero"`` against an absolute zero baseline.
    """

    delta: float = 0.3
    reference: str = "estimated"

    def __post_init__(self) -> None:
        if self.delta <= 0.0:
            raise ValueError(f"delta must be positive, got {self.delta!r}")
        if self.reference not in MED_REFERENCES:
            raise ValueError(
                f"reference must be one of {MED_REFERENCES}, got {self.reference!r}"
            )


@dataclass(frozen=True)
class MedEstimate:
    """Smallest dose with interpolated effect >= delta, if one exists."""

    reached: bool
    med: float

    def __repr__(self) -> str:
        return f"MedEstimate(reached={self.reached}, med={self.med!r})"


def estimate_med(fit: MapFit, spec: MedSpec | None = None) -> MedEstimate:
    """Closed-form MED on the piecewise-linear fitted curve.

    Walks the grid segments left to right and solves the first linear
    segment that crosses the effect threshold; "not reached" is a value
    (``MedEstimate(False, nan)``), not an error.
    """
    spec = spec or MedSpec()
    ref = fit.mu_hat[0] if spec.reference == "estimated" else 0.0
    effect = fit.mu_hat - ref
    doses = fit.doses
    if effect[0] >= spec.delta:
        return MedEstimate(True, float(doses[0]))
    for i in range(effect.size - 1):
        lo, hi = effect[i], effect[i + 1]
        if hi >= spec.delta:
            # lo < delta <= hi on this segment, so hi > lo strictly
            t = (spec.delta - lo) / (hi - lo)
            return MedEstimate(True, float(doses[i] + t * (doses[i + 1] - doses[i])))
    return MedEstimate(False, float("nan"))


# --- Monte Carlo calibration of the critical value ----------------------

@dataclass(frozen=True)
class CalibrationSetup:
    """Everything that shapes the null distribution of the statistic.

    The null truth is a flat zero curve; with a historical design
    attached, historical arms are generated at ``true_a * 0 - true_r``
    and the fit borrows. Solver options and prior settings must match
    the analysis the critical value will be used with.
    """

    current: TrialDesign
    model_kind: str
    priors: PriorSet
    historical: TrialDesign | None = None
    true_a: float = 1.0
    true_r: float = 0.0
    fix_placebo: bool = False
    clamp_epsilon: float = 1e-6
    solver: SolverOptions = field(default_factory=SolverOptions)

    def fingerprint_payload(self) -> dict:
        def design(d: TrialDesign | None):
            if d is None:
                return None
            return {"doses": list(d.doses), "n": d.n_per_arm, "sigma": d.sigma}

        p = self.priors
        return {
            "schema": CACHE_SCHEMA,
            "current": design(self.current),
            "historical": design(self.historical),
            "true_a": self.true_a,
            "true_r": self.true_r,
            "model_kind": self.model_kind,
            "fix_placebo": self.fix_placebo,
            "clamp_epsilon": self.clamp_epsilon,
            "priors": {
                "tau": p.tau,
                "emax": [p.emax_mean, p.emax_sd],
                "ed50": [p.ed50_mean, p.ed50_sd],
                "lam": [p.lam_shape, p.lam_rate],
                "e0": [p.e0_mean, p.e0_sd, p.e0_fixed],
                "rho": p.rho,
                "eta": p.eta,
                "b": p.b,
                "sign": p.curvature_prior_sign,
            },
            "solver": {
                "restarts": self.solver.restarts,
                "seed": self.solver.seed,
                "max_iter": self.solver.max_iter,
                "grad_tol": self.solver.grad_tol,
                "ftol": self.solver.ftol,
                "perturb_scale": self.solver.perturb_scale,
            },
        }


@dataclass(frozen=True)
class CalibrationResult:
    critical_value: float
    alpha: float
    n_replicates: int
    exceedance: float
    null_stats: NDArray
    fingerprint: str
    from_cache: bool

    def __post_init__(self) -> None:
        arr = np.array(self.null_stats, dtype=float).reshape(-1)
        arr.flags.writeable = False
        object.__setattr__(self, "null_stats", arr)


def resolve_cache_dir(cache_dir: str | Path | None = None) -> Path:
    """Explicit argument, else DOSECURVE_CACHE_DIR, else ~/.cache/dosecurve."""
    if cache_dir is not None:
        return Path(cache_dir)
    env = os.environ.get("DOSECURVE_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "dosecurve"


def _fit_null_replicate(
    setup: CalibrationSetup, seed: int, replicate: int
) -> MapFit:
    grid, cur_idx, hist_idx = build_grid(setup.current, setup.historical)
    data_c = generate_current_trial(
        None, setup.current, replicate_seed(seed, replicate, 0), grid
    )
    data_h = None
    if setup.historical is not None:
        data_h = generate_historical_trial(
            None,
            setup.historical,
            replicate_seed(seed, replicate, 1),
            setup.true_a,
            setup.true_r,
            grid,
        )
    spec = ObjectiveSpec(
        grid=grid,
        model_kind=setup.model_kind,
        priors=setup.priors,
        data_current=data_c,
        data_historical=data_h,
        fix_placebo=setup.fix_placebo,
        clamp_epsilon=setup.clamp_epsilon,
    )
    return map_fit(spec, setup.solver)


def critical_value_from_stats(stats: NDArray, alpha: float) -> tuple[float, float]:
    """Smallest threshold with empirical exceedance below alpha.

    With ``stats`` sorted ascending this is the order statistic at
    0-based index floor(n * (1 - alpha)); the resulting exceedance lies
    in [alpha - 1/n, alpha).
    """
    stats = np.sort(np.asarray(stats, dtype=float))
    n = stats.size
    idx = int(np.floor(n * (1.0 - alpha)))
    idx = min(idx, n - 1)
    c = float(stats[idx])
    exceedance = float(np.mean(stats > c))
    return c, exceedance


def _calibration_key(
    setup: CalibrationSetup, alpha: float, n_replicates: int, seed: int
) -> tuple[dict, str]:
    payload = {
        "setup": setup.fingerprint_payload(),
        "alpha": alpha,
        "n_replicates": n_replicates,
        "seed": seed,
    }
    blob = json.dumps(payload, sort_keys=True, default=repr)
    return payload, hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_cached_calibration(
    setup: CalibrationSetup,
    alpha: float = 0.05,
    n_replicates: int = 2000,
    seed: int = 0,
    cache_dir: str | Path | None = None,
) -> CalibrationResult | None:
    """Return the cached calibration for this exact setup, if present.

    Never computes; a missing or corrupt cache entry yields None.
    """
    _, fingerprint = _calibration_key(setup, alpha, n_replicates, seed)
    cache_path = resolve_cache_dir(cache_dir) / f"calib_{fingerprint}.json"
    if not cache_path.exists():
        return None
    try:
        stored = json.loads(cache_path.read_text())
        if stored.get("fingerprint") != fingerprint:
            return None
        return CalibrationResult(
            critical_value=float(stored["critical_value"]),
            alpha=alpha,
            n_replicates=n_replicates,
            exceedance=float(stored["exceedance"]),
            null_stats=np.asarray(stored["null_stats"], dtype=float),
            fingerprint=fingerprint,
            from_cache=True,
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return None  # corrupt cache entry: caller recomputes and overwrites


def calibrate_critical_value(
    setup: CalibrationSetup,
    alpha: float = 0.05,
    n_replicates: int = 2000,
    seed: int = 0,
    cache_dir: str | Path | None = None,
    use_cache: bool = True,
) -> CalibrationResult:
    """Monte Carlo critical value for the configured analysis.

    Simulates ``n_replicates`` null trials, fits each with the same
    model/priors/solver as the real analysis, and returns the smallest
    threshold whose empirical null exceedance is below ``alpha``
    together with the sorted null statistics (reused for ROC curves).
    Results are cached by fingerprint under ``cache_dir``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if alpha * n_replicates < 5.0:
        raise ValueError(
            f"insufficient replicates: alpha * n = {alpha * n_replicates:.2f} < 5; "
            f"raise n_replicates for a stable tail quantile"
        )

    payload, fingerprint = _calibration_key(setup, alpha, n_replicates, seed)
    cache_path = resolve_cache_dir(cache_dir) / f"calib_{fingerprint}.json"

    if use_cache:
        cached = load_cached_calibration(setup, alpha, n_replicates, seed, cache_dir)
        if cached is not None:
            return cached

    stats = np.empty(n_replicates)
    for i in range(n_replicates):
        fit = _fit_null_replicate(setup, seed, i)
        stats[i] = test_statistic(fit)
    stats.sort()
    c, exceedance = critical_value_from_stats(stats, alpha)

    if use_cache:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache_path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(
                {
                    "fingerprint": fingerprint,
                    "payload": payload,
                    "critical_value": c,
                    "exceedance": exceedance,
                    "null_stats": stats.tolist(),
                },
                sort_keys=True,
            )
        )
        tmp.replace(cache_path)

    return CalibrationResult(
        critical_value=c,
        alpha=alpha,
        n_replicates=n_replicates,
        exceedance=exceedance,
        null_stats=stats,
        fingerprint=fingerprint,
        from_cache=False,
    )
