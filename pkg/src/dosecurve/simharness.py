"""Operating-characteristic studies: scenario runs, ROC curves, metrics.

One scenario fixes a true curve, a current-trial design, a historical
availability pattern (four patterns: full overlap, partial overlap with
an off-grid dose, sparse, absent) and heterogeneity between the trials.
Every replicate draws one current (and possibly one historical) trial,
then every configured method fits the same data; per-replicate records
feed proof-of-concept rates, MED error metrics and ROC curves.

Replicate seeds are composed from (master seed, replicate, stream), so
the records are byte-identical however the replicate loop is scheduled,
including across worker-process counts.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .inference import (
    CalibrationResult,
    CalibrationSetup,
    MedSpec,
    calibrate_critical_value,
    estimate_med,
    test_statistic,
)
from .posterior import ObjectiveSpec, PriorSet
from .shapes import ShapeSpec, true_med
from .solver import SolverOptions, map_fit
from .trials import (
    SCENARIO_HISTORICAL_DOSES,
    TrialDesign,
    build_grid,
    generate_current_trial,
    generate_historical_trial,
    replicate_seed,
)

__all__ = [
    "MethodSpec",
    "ScenarioConfig",
    "Record",
    "ArmMetrics",
    "MedMetrics",
    "RocCurve",
    "ScenarioResult",
    "calibration_setup",
    "run_scenario",
    "roc_curve",
    "tpr_at_fpr",
    "med_metrics",
    "write_records_csv",
    "write_metrics_csv",
    "write_roc_csv",
    "write_manifest",
]

#: Replicates per worker task; fixed so scheduling cannot reorder draws.
_CHUNK = 50


@dataclass(frozen=True)
class MethodSpec:
    """One analysis arm: transform kind, priors, borrowing and solver."""

    name: str
    model_kind: str
    priors: PriorSet
    borrow: bool = False
    solver: SolverOptions = field(default_factory=SolverOptions)
    fix_placebo: bool = False
    clamp_epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("method name must be non-empty")
        if self.model_kind not in ("identity", "sigmoid_emax"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one operating-characteristic run."""

    scenario: int
    shape: ShapeSpec | None
    methods: tuple[MethodSpec, ...]
    n_replicates: int
    master_seed: int
    current: TrialDesign = field(
        default_factory=lambda: TrialDesign((0.0, 0.15, 0.5, 0.8, 1.0), 40, 1.0)
    )
    hist_n_per_arm: int = 40
    true_a: float = 1.0
    true_r: float = 0.0
    med: MedSpec = field(default_factory=MedSpec)
    alpha: float = 0.05
    calib_replicates: int = 2000
    calib_seed: int = 777

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIO_HISTORICAL_DOSES:
            raise ValueError(
                f"scenario must be one of {sorted(SCENARIO_HISTORICAL_DOSES)}, "
                f"got {self.scenario!r}"
            )
        if not self.methods:
            raise ValueError("at least one method is required")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate method names in {names}")
        if self.scenario == 4 and any(m.borrow for m in self.methods):
            raise ValueError("scenario 4 has no historical trial to borrow from")
        if self.n_replicates < 0:
            raise ValueError("n_replicates must be >= 0")
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def historical(self) -> TrialDesign | None:
        doses = SCENARIO_HISTORICAL_DOSES[self.scenario]
        if doses is None:
            return None
        return TrialDesign(doses, self.hist_n_per_arm, self.current.sigma)

    def payload(self) -> dict:
        """Canonical JSON-ready form; hashed into output files."""
        return {
            "scenario": self.scenario,
            "shape": None
            if self.shape is None
            else {"family": self.shape.family, "params": self.shape.as_dict()},
            "current": {
                "doses": list(self.current.doses),
                "n_per_arm": self.current.n_per_arm,
                "sigma": self.current.sigma,
            },
            "hist_n_per_arm": self.hist_n_per_arm,
            "true_a": self.true_a,
            "true_r": self.true_r,
            "n_replicates": self.n_replicates,
            "master_seed": self.master_seed,
            "med": {"delta": self.med.delta, "reference": self.med.reference},
            "alpha": self.alpha,
            "calib_replicates": self.calib_replicates,
            "calib_seed": self.calib_seed,
            "methods": [self._method_payload(m) for m in self.methods],
        }

    def _method_payload(self, m: MethodSpec) -> dict:
        fp = calibration_setup(self, m).fingerprint_payload()
        return {
            "name": m.name,
            "model_kind": m.model_kind,
            "borrow": m.borrow,
            "fix_placebo": m.fix_placebo,
            "clamp_epsilon": m.clamp_epsilon,
            "priors": fp["priors"],
            "solver": fp["solver"],
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.payload(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Record:
    """Per-replicate, per-method fit summary.

    A non-empty ``error`` marks a replicate whose fit raised; such rows
    are kept in the records file but excluded from every aggregate.
    """

    replicate: int
    method: str
    borrow: bool
    doses: tuple[float, ...]
    mu: tuple[float, ...]
    gamma: float
    a_hat: float | None
    r_hat: float | None
    t_stat: float
    poc: bool
    med_reached: bool
    med: float
    objective: float
    converged: bool
    restart_index: int
    n_iter: int
    error: str = ""


@dataclass(frozen=True)
class MedMetrics:
    n_used: int
    n_not_reached: int
    bias: float
    mse: float


@dataclass(frozen=True)
class ArmMetrics:
    method: str
    n_replicates: int
    n_failed: int
    poc_rate: float
    med: MedMetrics | None
    mu_mean: dict[float, float]


@dataclass(frozen=True)
class RocCurve:
    thresholds: NDArray
    fpr: NDArray
    tpr: NDArray


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    config_hash: str
    union_doses: tuple[float, ...]
    true_med_value: float | None
    calibrations: dict[str, CalibrationResult]
    records: tuple[Record, ...]
    metrics: dict[str, ArmMetrics]


# --- scenario execution ---------------------------------------------------

def calibration_setup(config: ScenarioConfig, method: MethodSpec) -> CalibrationSetup:
    return CalibrationSetup(
        current=config.current,
        model_kind=method.model_kind,
        priors=method.priors,
        historical=config.historical if method.borrow else None,
        true_a=config.true_a if method.borrow else 1.0,
        true_r=config.true_r if method.borrow else 0.0,
        fix_placebo=method.fix_placebo,
        clamp_epsilon=method.clamp_epsilon,
        solver=method.solver,
    )


def _run_chunk(args: tuple) -> list[Record]:
    config, indices, critical_values = args
    hist_design = config.historical
    out: list[Record] = []
    arms = []
    for m in config.methods:
        grid, _, _ = build_grid(config.current, hist_design if m.borrow else None)
        arms.append((m, grid))
    for rep in indices:
        seed_c = replicate_seed(config.master_seed, rep, 0)
        seed_h = replicate_seed(config.master_seed, rep, 1)
        for m, grid in arms:
            try:
                data_c = generate_current_trial(
                    config.shape, config.current, seed_c, grid
                )
                data_h = None
                if m.borrow:
                    data_h = generate_historical_trial(
                        config.shape,
                        hist_design,
                        seed_h,
                        config.true_a,
                        config.true_r,
                        grid,
                    )
                spec = ObjectiveSpec(
                    grid=grid,
                    model_kind=m.model_kind,
                    priors=m.priors,
                    data_current=data_c,
                    data_historical=data_h,
                    fix_placebo=m.fix_placebo,
                    clamp_epsilon=m.clamp_epsilon,
                )
                fit = map_fit(spec, m.solver)
                t = test_statistic(fit)
                med_est = estimate_med(fit, config.med)
                rec = Record(
                    replicate=rep,
                    method=m.name,
                    borrow=m.borrow,
                    doses=tuple(float(x) for x in grid.doses),
                    mu=tuple(float(x) for x in fit.mu_hat),
                    gamma=fit.gamma_hat,
                    a_hat=fit.point.a,
                    r_hat=fit.point.r,
                    t_stat=t,
                    poc=t > critical_values[m.name],
                    med_reached=med_est.reached,
                    med=med_est.med,
                    objective=fit.objective,
                    converged=fit.converged,
                    restart_index=fit.restart_index,
                    n_iter=fit.n_iter,
                )
            except Exception as exc:  # replicate failures recorded, not fatal
                nan = float("nan")
                rec = Record(
                    replicate=rep,
                    method=m.name,
                    borrow=m.borrow,
                    doses=tuple(float(x) for x in grid.doses),
                    mu=(nan,) * grid.doses.size,
                    gamma=nan,
                    a_hat=None,
                    r_hat=None,
                    t_stat=nan,
                    poc=False,
                    med_reached=False,
                    med=nan,
                    objective=nan,
                    converged=False,
                    restart_index=-1,
                    n_iter=0,
                    error=f"{type(exc).__name__}: {exc}",
                )
            out.append(rec)
    return out


def run_scenario(
    config: ScenarioConfig,
    threads: int = 1,
    cache_dir: str | Path | None = None,
) -> ScenarioResult:
    """Calibrate every method arm, run all replicates, aggregate metrics.

    ``threads`` > 1 distributes replicate chunks over worker processes;
    the output is byte-identical for any thread count because seeds are
    per-replicate and records are reassembled in replicate order.
    """
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")

    union_grid, _, _ = build_grid(
        config.current,
        config.historical if any(m.borrow for m in config.methods) else None,
    )
    union_doses = tuple(float(x) for x in union_grid.doses)
    tm = true_med(config.shape, config.med.delta) if config.shape else None

    if config.n_replicates == 0:
        return ScenarioResult(
            config=config,
            config_hash=config.config_hash(),
            union_doses=union_doses,
            true_med_value=tm,
            calibrations={},
            records=(),
            metrics={},
        )

    calibrations: dict[str, CalibrationResult] = {}
    for m in config.methods:
        calibrations[m.name] = calibrate_critical_value(
            calibration_setup(config, m),
            alpha=config.alpha,
            n_replicates=config.calib_replicates,
            seed=config.calib_seed,
            cache_dir=cache_dir,
        )
    critical_values = {k: v.critical_value for k, v in calibrations.items()}

    chunks = [
        (config, list(range(lo, min(lo + _CHUNK, config.n_replicates))), critical_values)
        for lo in range(0, config.n_replicates, _CHUNK)
    ]
    if threads == 1:
        chunk_results = [_run_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunk_results = list(pool.map(_run_chunk, chunks))

    method_order = {m.name: i for i, m in enumerate(config.methods)}
    records = tuple(
        sorted(
            (rec for chunk in chunk_results for rec in chunk),
            key=lambda rec: (rec.replicate, method_order[rec.method]),
        )
    )

    metrics = {
        m.name: _arm_metrics(m.name, records, union_doses, tm) for m in config.methods
    }
    return ScenarioResult(
        config=config,
        config_hash=config.config_hash(),
        union_doses=union_doses,
        true_med_value=tm,
        calibrations=calibrations,
        records=records,
        metrics=metrics,
    )


def _arm_metrics(
    name: str,
    records: tuple[Record, ...],
    union_doses: tuple[float, ...],
    true_med_value: float | None,
) -> ArmMetrics:
    all_rows = [r for r in records if r.method == name]
    rows = [r for r in all_rows if not r.error]
    poc_rate = float(np.mean([r.poc for r in rows])) if rows else float("nan")
    med = None
    if true_med_value is not None:
        meds = np.array(
            [r.med if r.med_reached else np.nan for r in rows], dtype=float
        )
        med = med_metrics(meds, true_med_value)
    mu_mean: dict[float, float] = {}
    for dose in union_doses:
        vals = [r.mu[r.doses.index(dose)] for r in rows if dose in r.doses]
        if vals:
            mu_mean[dose] = float(np.mean(vals))
    return ArmMetrics(
        method=name,
        n_replicates=len(rows),
        n_failed=len(all_rows) - len(rows),
        poc_rate=poc_rate,
        med=med,
        mu_mean=mu_mean,
    )


# --- metric helpers --------------------------------------------------------

def med_metrics(meds: NDArray, true_med_value: float) -> MedMetrics:
    """Bias and MSE of MED estimates; NaN entries count as not reached."""
    meds = np.asarray(meds, dtype=float)
    used = meds[~np.isnan(meds)]
    if used.size == 0:
        return MedMetrics(0, int(meds.size), float("nan"), float("nan"))
    err = used - true_med_value
    return MedMetrics(
        n_used=int(used.size),
        n_not_reached=int(meds.size - used.size),
        bias=float(err.mean()),
        mse=float(np.mean(err * err)),
    )


def roc_curve(null_stats: NDArray, alt_stats: NDArray) -> RocCurve:
    """Empirical ROC of the statistic: exceedance rates over thresholds.

    Thresholds run from above the largest observed statistic (both
    rates 0) down through every distinct observed value (both rates
    reach 1), so the curve always spans the unit square corners.
    """
    null_stats = np.asarray(null_stats, dtype=float)
    alt_stats = np.asarray(alt_stats, dtype=float)
    if null_stats.size == 0 or alt_stats.size == 0:
        raise ValueError("roc_curve needs non-empty null and alternative samples")
    values = np.unique(np.concatenate([null_stats, alt_stats]))
    thresholds = np.concatenate([[values[-1] + 1.0], values[::-1]])
    fpr = np.array([np.mean(null_stats > t) for t in thresholds])
    tpr = np.array([np.mean(alt_stats > t) for t in thresholds])
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr)


def tpr_at_fpr(roc: RocCurve, fpr_target: float) -> float:
    """TPR at the largest threshold whose FPR stays within the target."""
    ok = np.nonzero(roc.fpr <= fpr_target)[0]
    if ok.size == 0:
        return 0.0
    return float(roc.tpr[ok[-1]])


# --- output files -----------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return ""
    return repr(x)


def _write_csv(path: str | Path, comment: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(comment + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_records_csv(result: ScenarioResult, path: str | Path) -> None:
    """Per-replicate records; layout documented in docs/formats.md."""
    doses = result.union_doses
    cols = [
        "replicate",
        "method",
        "borrow",
        "t_stat",
        "poc",
        "med_reached",
        "med",
        "gamma",
        "a_hat",
        "r_hat",
        "objective",
        "converged",
        "restart_index",
        "n_iter",
    ] + [f"mu_{i}" for i in range(len(doses))] + ["error"]
    rows = []
    for rec in result.records:
        row = [
            str(rec.replicate),
            rec.method,
            _fmt(rec.borrow),
            _fmt(rec.t_stat),
            _fmt(rec.poc),
            _fmt(rec.med_reached),
            _fmt(rec.med),
            _fmt(rec.gamma),
            _fmt(rec.a_hat),
            _fmt(rec.r_hat),
            _fmt(rec.objective),
            _fmt(rec.converged),
            str(rec.restart_index),
            str(rec.n_iter),
        ]
        lookup = dict(zip(rec.doses, rec.mu))
        row.extend(_fmt(lookup.get(d)) for d in doses)
        row.append(rec.error)
        rows.append(row)
    comment = f"# config={result.config_hash} doses={json.dumps(list(doses))}"
    _write_csv(path, comment, cols, rows)


def write_metrics_csv(result: ScenarioResult, path: str | Path) -> None:
    """Per-method aggregate metrics; layout documented in docs/formats.md."""
    doses = result.union_doses
    cols = [
        "method",
        "n_replicates",
        "n_failed",
        "critical_value",
        "poc_rate",
        "n_med_used",
        "n_med_not_reached",
        "med_bias",
        "med_mse",
    ] + [f"mean_mu_{i}" for i in range(len(doses))]
    rows = []
    for m in result.config.methods:
        if m.name not in result.metrics:
            continue
        a = result.metrics[m.name]
        calib = result.calibrations.get(m.name)
        med = a.med
        row = [
            m.name,
            str(a.n_replicates),
            str(a.n_failed),
            _fmt(calib.critical_value) if calib else "",
            _fmt(a.poc_rate),
            str(med.n_used) if med else "",
            str(med.n_not_reached) if med else "",
            _fmt(med.bias) if med else "",
            _fmt(med.mse) if med else "",
        ]
        row.extend(_fmt(a.mu_mean.get(d)) for d in doses)
        rows.append(row)
    comment = (
        f"# config={result.config_hash} doses={json.dumps(list(doses))}"
        f" true_med={_fmt(result.true_med_value)}"
    )
    _write_csv(path, comment, cols, rows)


def write_roc_csv(result: ScenarioResult, path: str | Path) -> None:
    """ROC per method: its calibration nulls against its scenario fits."""
    rows = []
    for m in result.config.methods:
        if m.name not in result.calibrations:
            continue
        null = result.calibrations[m.name].null_stats
        alt = np.array(
            [r.t_stat for r in result.records if r.method == m.name and not r.error]
        )
        if alt.size == 0:
            continue
        roc = roc_curve(null, alt)
        for t, f, tp in zip(roc.thresholds, roc.fpr, roc.tpr):
            rows.append([m.name, _fmt(t), _fmt(f), _fmt(tp)])
    _write_csv(
        path,
        f"# config={result.config_hash}",
        ["method", "threshold", "fpr", "tpr"],
        rows,
    )


def write_manifest(result: ScenarioResult, path: str | Path) -> None:
    """Run manifest: config echo, hash, versions, calibration summary."""
    import scipy

    from . import __version__ as _pkg_version
    from .kernel import active_backend

    doc = {
        "config": result.config.payload(),
        "config_hash": result.config_hash,
        "union_doses": list(result.union_doses),
        "true_med": result.true_med_value,
        "critical_values": {
            k: {
                "critical_value": v.critical_value,
                "alpha": v.alpha,
                "n_replicates": v.n_replicates,
                "exceedance": v.exceedance,
                "fingerprint": v.fingerprint,
            }
            for k, v in result.calibrations.items()
        },
        "versions": {
            "dosecurve": _pkg_version,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "kernel_backend": active_backend(),
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
