"""Command line front end.

Subcommands: calibrate-shapes, calibrate, fit, simulate, roc, report.
Exit codes are a stable contract: 0 success, 2 config error, 3 data
error, 4 runtime error. Flags win over config-file values. The
calibration cache location is ``--cache-dir``, else the
DOSECURVE_CACHE_DIR environment variable, else ~/.cache/dosecurve.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, DataError, RunConfig, load_config
from .curvature import DoseGrid
from .inference import (
    CalibrationSetup,
    calibrate_critical_value,
    estimate_med,
    load_cached_calibration,
    test_statistic,
)
from .posterior import ObjectiveSpec, TrialDataset
from .shapes import DEFAULT_THRESHOLD, build_shape_manifest
from .simharness import (
    MethodSpec,
    calibration_setup,
    roc_curve,
    run_scenario,
    tpr_at_fpr,
    write_manifest,
    write_metrics_csv,
    write_records_csv,
    write_roc_csv,
)
from .solver import map_fit
from .trials import TrialDesign

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_RUN_FILES = ("records.csv", "metrics.csv", "roc.csv", "manifest.json")


def _warn(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- calibrate-shapes --------------------------------------------------------

def cmd_calibrate_shapes(args: argparse.Namespace) -> int:
    if args.threshold <= 0.0:
        raise ConfigError(f"--threshold must be positive, got {args.threshold}")
    manifest = build_shape_manifest(args.threshold)
    print(f"{'family':<14}{'target_med':>12}{'achieved_med':>14}  params")
    for entry in manifest["shapes"]:
        params = ", ".join(f"{k}={v:.6g}" for k, v in entry["params"].items())
        print(
            f"{entry['family']:<14}{entry['target_med']:>12.3f}"
            f"{entry['achieved_med']:>14.9f}  {params}"
        )
    if args.out:
        Path(args.out).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        _warn(f"wrote {args.out}")
    return EXIT_OK


# --- calibrate ---------------------------------------------------------------

def _select_methods(cfg: RunConfig, names: list[str] | None) -> list[MethodSpec]:
    if not names:
        return list(cfg.methods)
    by_name = {m.name: m for m in cfg.methods}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise ConfigError(
            f"method(s) {missing} not in config (have {sorted(by_name)})"
        )
    return [by_name[n] for n in names]


def cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    alpha = cfg.alpha if args.alpha is None else args.alpha
    if not 0.0 < alpha < 0.5:
        raise ConfigError(f"alpha must be in (0, 0.5), got {alpha}")
    n_rep = cfg.calib_replicates if args.replicates is None else args.replicates
    seed = cfg.calib_seed if args.seed is None else args.seed
    scenario = cfg.scenario_config()

    for method in _select_methods(cfg, args.method):
        setup = calibration_setup(scenario, method)
        cached = load_cached_calibration(setup, alpha, n_rep, seed, args.cache_dir)
        if cached is not None:
            _warn(f"{method.name}: reusing cached calibration {cached.fingerprint}")
            result = cached
        else:
            try:
                result = calibrate_critical_value(
                    setup, alpha, n_rep, seed, cache_dir=args.cache_dir
                )
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        print(
            f"{method.name}: critical_value={result.critical_value!r} "
            f"null_rejection_rate={result.exceedance!r} "
            f"n={result.n_replicates} alpha={alpha} "
            f"fingerprint={result.fingerprint}"
        )
    return EXIT_OK


# --- fit ---------------------------------------------------------------------

def _read_trial_csv(path: str | Path) -> dict[str, list[tuple[float, float]]]:
    """Read a dose/response CSV; returns rows grouped by trial tag."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"data file not found: {p}")
    with open(p, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        cols = reader.fieldnames
        if cols is None:
            raise DataError(f"{p}: empty file")
        allowed = ({"dose", "response"}, {"dose", "response", "trial"})
        if set(cols) not in allowed:
            raise DataError(
                f"{p}: columns must be dose,response[,trial]; got {cols}"
            )
        out: dict[str, list[tuple[float, float]]] = {"current": [], "historical": []}
        for lineno, row in enumerate(reader, start=2):
            try:
                dose = float(row["dose"])
                resp = float(row["response"])
            except (TypeError, ValueError) as exc:
                raise DataError(f"{p}:{lineno}: non-numeric dose/response") from exc
            if not 0.0 <= dose <= 1.0:
                raise DataError(
                    f"{p}:{lineno}: dose {dose} outside the standardized range [0, 1]"
                )
            if not np.isfinite(resp):
                raise DataError(f"{p}:{lineno}: non-finite response")
            tag = (row.get("trial") or "current").strip()
            if tag not in out:
                raise DataError(
                    f"{p}:{lineno}: trial must be 'current' or 'historical', got {tag!r}"
                )
            out[tag].append((dose, resp))
    if not out["current"]:
        raise DataError(f"{p}: no rows with trial=current")
    return out


def _group_by_dose(rows: list[tuple[float, float]]) -> dict[float, list[float]]:
    grouped: dict[float, list[float]] = {}
    for dose, resp in rows:
        grouped.setdefault(dose, []).append(resp)
    return grouped


def _dataset(
    kind: str, grouped: dict[float, list[float]], doses: list[float], sigma: float
) -> TrialDataset:
    idx = tuple(doses.index(d) for d in sorted(grouped))
    resp = tuple(np.array(grouped[d]) for d in sorted(grouped))
    return TrialDataset(kind=kind, grid_indices=idx, responses=resp, sigma=sigma)


def _design_if_balanced(
    grouped: dict[float, list[float]], sigma: float
) -> TrialDesign | None:
    counts = {len(v) for v in grouped.values()}
    if len(counts) != 1:
        return None
    return TrialDesign(tuple(sorted(grouped)), counts.pop(), sigma)


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.method:
        method = _select_methods(cfg, [args.method])[0]
    elif len(cfg.methods) == 1:
        method = cfg.methods[0]
    else:
        raise ConfigError(
            f"config defines several methods {[m.name for m in cfg.methods]}; "
            f"pick one with --method"
        )

    rows = _read_trial_csv(args.data)
    cur = _group_by_dose(rows["current"])
    hist = _group_by_dose(rows["historical"]) if rows["historical"] else None
    if method.borrow and hist is None:
        raise DataError(
            "borrowing is enabled but the data has no rows tagged trial=historical"
        )
    if not method.borrow and hist is not None:
        _warn(
            f"ignoring {sum(len(v) for v in hist.values())} historical rows: "
            f"method {method.name!r} does not borrow"
        )
        hist = None

    sigma = cfg.design.sigma
    doses = sorted(set(cur) | set(hist or ()))
    grid = DoseGrid(tuple(doses))
    data_c = _dataset("current", cur, doses, sigma)
    data_h = _dataset("historical", hist, doses, sigma) if hist else None

    spec = ObjectiveSpec(
        grid=grid,
        model_kind=method.model_kind,
        priors=method.priors,
        data_current=data_c,
        data_historical=data_h,
        fix_placebo=method.fix_placebo,
        clamp_epsilon=method.clamp_epsilon,
    )
    fit = map_fit(spec, method.solver)
    t = test_statistic(fit)
    med = estimate_med(fit, cfg.med)

    # PoC needs a cached Monte Carlo critical value for this exact design.
    critical = None
    design_c = _design_if_balanced(cur, sigma)
    design_h = _design_if_balanced(hist, sigma) if hist else None
    if design_c is None or (hist is not None and design_h is None):
        _warn("PoC omitted: arms are unbalanced, calibration is design-based")
    else:
        setup = CalibrationSetup(
            current=design_c,
            model_kind=method.model_kind,
            priors=method.priors,
            historical=design_h,
            true_a=cfg.true_a if method.borrow else 1.0,
            true_r=cfg.true_r if method.borrow else 0.0,
            fix_placebo=method.fix_placebo,
            clamp_epsilon=method.clamp_epsilon,
            solver=method.solver,
        )
        critical = load_cached_calibration(
            setup, cfg.alpha, cfg.calib_replicates, cfg.calib_seed, args.cache_dir
        )
        if critical is None:
            _warn(
                "PoC omitted: no cached critical value for this design; "
                "run `dosecurve calibrate` with a matching config first"
            )

    counts_c = {d: len(v) for d, v in sorted(cur.items())}
    report = {
        "method": method.name,
        "model_kind": method.model_kind,
        "borrow": method.borrow,
        "sigma": sigma,
        "doses": doses,
        "n_current": [counts_c.get(d, 0) for d in doses],
        "n_historical": [len((hist or {}).get(d, [])) for d in doses],
        "mu_hat": [float(v) for v in fit.mu_hat],
        "gamma_hat": fit.gamma_hat,
        "theta_hat": None
        if fit.point.theta is None
        else {
            "e0": fit.point.theta.e0,
            "emax": fit.point.theta.emax,
            "ed50": fit.point.theta.ed50,
            "lam": fit.point.theta.lam,
        },
        "a_hat": fit.point.a,
        "r_hat": fit.point.r,
        "t_stat": t,
        "critical_value": None if critical is None else critical.critical_value,
        "poc": None if critical is None else bool(t > critical.critical_value),
        "med": {
            "reached": med.reached,
            "value": med.med if med.reached else None,
            "delta": cfg.med.delta,
            "reference": cfg.med.reference,
        },
        "objective": fit.objective,
        "converged": fit.converged,
        "n_iter": fit.n_iter,
        "calibration_fingerprint": None if critical is None else critical.fingerprint,
    }

    print(f"method {method.name} ({method.model_kind}"
          f"{', borrowing' if method.borrow else ''})")
    print(f"{'dose':>8} {'n_cur':>6} {'n_hist':>7} {'mu_hat':>12}")
    for i, d in enumerate(doses):
        print(
            f"{d:>8.3g} {report['n_current'][i]:>6} "
            f"{report['n_historical'][i]:>7} {fit.mu_hat[i]:>12.6f}"
        )
    print(f"gamma_hat = {fit.gamma_hat:.6f}")
    if report["theta_hat"] is not None:
        th = report["theta_hat"]
        print(
            f"theta_hat: e0={th['e0']:.6f} emax={th['emax']:.6f} "
            f"ed50={th['ed50']:.6f} lam={th['lam']:.6f}"
        )
    if fit.point.a is not None:
        print(f"a_hat = {fit.point.a:.6f}  r_hat = {fit.point.r:.6f}")
    print(f"T = {t:.6f}")
    if critical is not None:
        print(
            f"PoC: {'yes' if report['poc'] else 'no'} "
            f"(T {'>' if report['poc'] else '<='} c = {critical.critical_value:.6f})"
        )
    if med.reached:
        print(f"MED = {med.med:.6f} (delta={cfg.med.delta}, ref={cfg.med.reference})")
    else:
        print(f"MED not reached within the dose range (delta={cfg.med.delta})")

    out = args.out or str(Path(args.data).with_suffix(".fit.json"))
    Path(out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _warn(f"wrote {out}")
    return EXIT_OK


# --- simulate ------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.replicates is not None:
        if args.replicates < 0:
            raise ConfigError(f"--replicates must be >= 0, got {args.replicates}")
        cfg = _replace_config(cfg, n_replicates=args.replicates)
    if args.seed is not None:
        cfg = _replace_config(cfg, master_seed=args.seed)
    threads = args.threads if args.threads is not None else cfg.threads

    out_dir = args.out or cfg.out_dir
    if not out_dir:
        raise ConfigError("no output directory: set run.out_dir or pass --out")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    scenario = cfg.scenario_config()
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not args.force:
        try:
            old = json.loads(manifest_path.read_text())
        except json.JSONDecodeError:
            old = {}
        if old.get("config_hash") == scenario.config_hash() and all(
            (out / f).exists() for f in _RUN_FILES
        ):
            _warn(f"outputs in {out} already match config {scenario.config_hash()}; "
                  f"skipping (use --force to rerun)")
            return EXIT_OK

    result = run_scenario(scenario, threads=threads, cache_dir=args.cache_dir)
    write_records_csv(result, out / "records.csv")
    write_metrics_csv(result, out / "metrics.csv")
    write_roc_csv(result, out / "roc.csv")
    write_manifest(result, manifest_path)
    n_failed = sum(1 for r in result.records if r.error)
    print(
        f"wrote {', '.join(_RUN_FILES)} to {out} "
        f"({len(result.records)} records, {n_failed} failed, "
        f"config {result.config_hash})"
    )
    return EXIT_OK


def _replace_config(cfg: RunConfig, **kw) -> RunConfig:
    from dataclasses import replace

    try:
        return replace(cfg, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# --- roc -----------------------------------------------------------------------

def _read_stats_csv(path: str | Path, method: str | None) -> np.ndarray:
    """Pull t_stat values for one method out of a records CSV."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"records file not found: {p}")
    with open(p, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames is None or "t_stat" not in reader.fieldnames:
            raise DataError(f"{p}: missing t_stat column")
        has_method = "method" in reader.fieldnames
        has_error = "error" in reader.fieldnames
        if method is not None and not has_method:
            raise DataError(f"{p}: no method column to match {method!r}")
        stats = []
        seen = set()
        for row in reader:
            if has_error and row.get("error"):
                continue
            name = row["method"] if has_method else None
            if name is not None:
                seen.add(name)
            if method is not None and name != method:
                continue
            val = row["t_stat"]
            if val == "":
                continue
            try:
                stats.append(float(val))
            except ValueError as exc:
                raise DataError(f"{p}: bad t_stat value {val!r}") from exc
    if method is None and len(seen) > 1:
        raise DataError(
            f"{p} holds several methods {sorted(seen)}; pick one with the "
            f"matching --method flag"
        )
    if not stats:
        raise DataError(f"{p}: no usable t_stat rows"
                        + (f" for method {method!r}" if method else ""))
    return np.array(stats)


def _read_null_stats(args: argparse.Namespace) -> np.ndarray:
    if args.null_calib:
        p = Path(args.null_calib)
        if not p.is_file():
            raise DataError(f"calibration file not found: {p}")
        try:
            doc = json.loads(p.read_text())
            stats = np.asarray(doc["null_stats"], dtype=float)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{p}: not a calibration cache file") from exc
        if stats.size == 0:
            raise DataError(f"{p}: empty null_stats")
        return stats
    return _read_stats_csv(args.null_records, args.null_method)


def cmd_roc(args: argparse.Namespace) -> int:
    if bool(args.null_calib) == bool(args.null_records):
        raise ConfigError("give exactly one of --null-calib or --null-records")
    alt = _read_stats_csv(args.alt, args.alt_method)
    null = _read_null_stats(args)
    roc = roc_curve(null, alt)
    auc = float(np.trapz(roc.tpr, roc.fpr))
    label = args.alt_method or "alt"
    if args.out:
        rows = [
            [label, repr(float(t)), repr(float(f)), repr(float(tp))]
            for t, f, tp in zip(roc.thresholds, roc.fpr, roc.tpr)
        ]
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["method", "threshold", "fpr", "tpr"])
            writer.writerows(rows)
        _warn(f"wrote {args.out}")
    print(f"n_null={null.size} n_alt={alt.size} auc={auc:.6f}")
    for target in args.tpr_at_fpr or []:
        print(f"tpr@fpr<={target}: {tpr_at_fpr(roc, target):.6f}")
    return EXIT_OK


# --- report ----------------------------------------------------------------------

def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.dir)
    manifest_path = run_dir / "manifest.json"
    metrics_path = run_dir / "metrics.csv"
    if not manifest_path.is_file() or not metrics_path.is_file():
        raise DataError(f"{run_dir} is not a run directory (need manifest.json "
                        f"and metrics.csv)")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON") from exc

    with open(metrics_path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        rows = list(reader)

    cfg = manifest.get("config", {})
    versions = manifest.get("versions", {})
    print(f"run {manifest.get('config_hash', '?')}"
          f"  scenario={cfg.get('scenario', '?')}"
          f"  shape={(cfg.get('shape') or {}).get('family', 'none')}"
          f"  replicates={cfg.get('n_replicates', '?')}")
    print(f"versions: {', '.join(f'{k}={v}' for k, v in sorted(versions.items()))}")
    tm = manifest.get("true_med")
    print(f"true MED: {'n/a' if tm is None else f'{tm:.6f}'}")
    print()
    hdr = (f"{'method':<20}{'poc_rate':>10}{'crit':>10}{'med_bias':>12}"
           f"{'med_mse':>12}{'not_reached':>12}{'failed':>8}")
    print(hdr)
    for row in rows:
        def cell(key: str, width: int, fmt: str = ".4f") -> str:
            val = row.get(key, "")
            if val in ("", None):
                return " " * (width - 3) + "n/a"
            return f"{float(val):>{width}{fmt}}"

        print(
            f"{row.get('method', '?'):<20}"
            + cell("poc_rate", 10)
            + cell("critical_value", 10)
            + cell("med_bias", 12)
            + cell("med_mse", 12)
            + f"{row.get('n_med_not_reached', 'n/a'):>12}"
            + f"{row.get('n_failed', 'n/a'):>8}"
        )
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dosecurve",
        description="Curvature-penalized MAP dose-response estimation and "
                    "operating-characteristic simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "calibrate-shapes",
        help="tune the standard true-curve battery and print/write its manifest",
    )
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                   help="clinical relevance threshold (default %(default)s)")
    p.add_argument("--out", help="write the manifest JSON here")
    p.set_defaults(func=cmd_calibrate_shapes)

    p = sub.add_parser(
        "calibrate", help="Monte Carlo critical value for each configured method"
    )
    p.add_argument("--config", required=True)
    p.add_argument("--method", action="append",
                   help="calibrate only this method (repeatable)")
    p.add_argument("--alpha", type=float, help="override run.alpha")
    p.add_argument("--replicates", type=int, help="override run.calib_replicates")
    p.add_argument("--seed", type=int, help="override run.calib_seed")
    p.add_argument("--cache-dir", help="calibration cache directory")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit", help="fit one dataset and report the estimates")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True,
                   help="CSV with columns dose,response[,trial]")
    p.add_argument("--method", help="method name when the config has several")
    p.add_argument("--out", help="JSON report path (default: <data>.fit.json)")
    p.add_argument("--cache-dir", help="calibration cache directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser(
        "simulate", help="run a scenario and write records/metrics/ROC/manifest"
    )
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides run.out_dir)")
    p.add_argument("--replicates", type=int, help="override run.n_replicates")
    p.add_argument("--seed", type=int, help="override run.master_seed")
    p.add_argument("--threads", type=int, help="worker processes (overrides run.threads)")
    p.add_argument("--cache-dir", help="calibration cache directory")
    p.add_argument("--force", action="store_true",
                   help="rerun even if outputs match the config hash")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "roc", help="ROC curve from records CSVs (external comparators welcome)"
    )
    p.add_argument("--alt", required=True, help="records CSV with the alternative fits")
    p.add_argument("--alt-method", help="method name inside --alt")
    p.add_argument("--null-calib", help="calibration cache JSON with null_stats")
    p.add_argument("--null-records", help="records CSV with null fits")
    p.add_argument("--null-method", help="method name inside --null-records")
    p.add_argument("--out", help="write the ROC curve CSV here")
    p.add_argument("--tpr-at-fpr", type=float, action="append",
                   help="report TPR at this FPR bound (repeatable)")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("report", help="summarize a simulate run directory")
    p.add_argument("--dir", required=True, help="directory written by simulate")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _warn(f"config error: {exc}")
        return EXIT_CONFIG
    except DataError as exc:
        _warn(f"data error: {exc}")
        return EXIT_DATA
    except Exception as exc:  # stable nonzero exit for anything unrecoverable
        _warn(f"runtime error: {type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
