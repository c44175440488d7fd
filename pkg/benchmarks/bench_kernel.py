"""Benchmark the compiled objective kernel against the numpy fallback.

Times raw objective+gradient evaluations (the inner loop of every fit)
for both backends on representative problems, then one full MAP fit per
model kind with whichever backend is active. Run from the repo root:

    python3 benchmarks/bench_kernel.py
    python3 benchmarks/bench_kernel.py --evals 5000 --fits 20
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from dosecurve import _kernel_numpy
from dosecurve.curvature import DoseGrid
from dosecurve.kernel import active_backend
from dosecurve.posterior import ObjectiveSpec, PriorSet, TrialDataset, pack_objective
from dosecurve.solver import default_start, map_fit
from dosecurve.trials import TrialDesign, build_grid, generate_current_trial, \
    generate_historical_trial, replicate_seed

try:
    from dosecurve import _kernel_cy
except ImportError:
    _kernel_cy = None


def _make_spec(model_kind: str, borrow: bool, seed: int = 0) -> ObjectiveSpec:
    current = TrialDesign((0.0, 0.15, 0.5, 0.8, 1.0), 40, 1.0)
    historical = TrialDesign((0.0, 0.15, 0.2, 0.8, 1.0), 40, 1.0) if borrow else None
    grid, _, _ = build_grid(current, historical)
    data_c = generate_current_trial(None, current, replicate_seed(seed, 0, 0), grid)
    data_h = None
    if borrow:
        data_h = generate_historical_trial(
            None, historical, replicate_seed(seed, 0, 1), 1.0, 0.0, grid
        )
    tau = 3.0 if model_kind == "identity" else 0.5
    return ObjectiveSpec(
        grid=grid,
        model_kind=model_kind,
        priors=PriorSet(tau=tau),
        data_current=data_c,
        data_historical=data_h,
    )


def _time_evals(backend, packed, points: np.ndarray) -> float:
    """Seconds per evaluation, amortized over all points."""
    handle = backend.prepare(packed)
    backend.value_and_grad(handle, points[0])  # warm up
    t0 = time.perf_counter()
    for v in points:
        backend.value_and_grad(handle, v)
    return (time.perf_counter() - t0) / len(points)


def bench_evals(n_evals: int, rng: np.random.Generator) -> None:
    print(f"{'problem':<28}{'numpy':>12}{'cython':>12}{'speedup':>10}")
    for model_kind in ("identity", "sigmoid_emax"):
        for borrow in (False, True):
            spec = _make_spec(model_kind, borrow)
            packed = pack_objective(spec)
            start = default_start(packed)
            points = start + rng.normal(0.0, 0.5, (n_evals, start.size))
            t_np = _time_evals(_kernel_numpy, packed, points)
            label = f"{model_kind}{' +borrow' if borrow else ''} (dim={start.size})"
            if _kernel_cy is None:
                print(f"{label:<28}{t_np * 1e6:>10.1f}us{'n/a':>12}{'':>10}")
                continue
            t_cy = _time_evals(_kernel_cy, packed, points)
            print(
                f"{label:<28}{t_np * 1e6:>10.1f}us{t_cy * 1e6:>10.1f}us"
                f"{t_np / t_cy:>9.1f}x"
            )


def bench_fits(n_fits: int) -> None:
    print(f"\nfull MAP fits, active backend = {active_backend()}")
    for model_kind in ("identity", "sigmoid_emax"):
        spec = _make_spec(model_kind, borrow=False)
        map_fit(spec)  # warm up
        t0 = time.perf_counter()
        for _ in range(n_fits):
            map_fit(spec)
        per = (time.perf_counter() - t0) / n_fits
        print(f"  {model_kind:<16}{per * 1e3:>8.1f} ms/fit")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--evals", type=int, default=2000,
                        help="objective evaluations per problem (default %(default)s)")
    parser.add_argument("--fits", type=int, default=10,
                        help="full fits per model kind (default %(default)s)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if _kernel_cy is None:
        print("compiled kernel not built; timing the numpy fallback only\n")
    bench_evals(args.evals, np.random.default_rng(args.seed))
    bench_fits(args.fits)


if __name__ == "__main__":
    main()
