"""Inference: statistic, MED, interpolation, calibration cache."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import fit_stub
from dosecurve.inference import (
    CalibrationSetup,
    MedEstimate,
    MedSpec,
    calibrate_critical_value,
    critical_value_from_stats,
    detect_poc,
    estimate_med,
    interpolate_curve,
    load_cached_calibration,
    resolve_cache_dir,
)
from dosecurve.inference import test_statistic as poc_statistic
from dosecurve.posterior import PriorSet
from dosecurve.solver import SolverOptions
from dosecurve.trials import TrialDesign

DOSES5 = (0.0, 0.15, 0.5, 0.8, 1.0)


def test_statistic_is_best_active_effect():
    fit = fit_stub(DOSES5, [0.1, 0.05, 0.3, 0.55, 0.4])
    assert poc_statistic(fit) == pytest.approx(0.45)
    flat = fit_stub(DOSES5, [0.2, 0.1, 0.15, 0.05, 0.08])
    assert poc_statistic(flat) < 0.0


def test_detect_poc_is_strictly_greater():
    fit = fit_stub((0.0, 1.0), [0.0, 0.4])
    assert detect_poc(fit, 0.39999)
    assert not detect_poc(fit, 0.4)  # exact tie does not reject
    assert not detect_poc(fit, 0.41)


def test_interpolation_and_range_refusal():
    fit = fit_stub((0.0, 0.5, 1.0), [0.0, 0.2, 0.6])
    assert interpolate_curve(fit, 0.25) == pytest.approx(0.1)
    assert isinstance(interpolate_curve(fit, 0.25), float)
    got = interpolate_curve(fit, np.array([0.0, 0.75, 1.0]))
    np.testing.assert_allclose(got, [0.0, 0.4, 0.6])
    with pytest.raises(ValueError):
        interpolate_curve(fit, 1.01)
    with pytest.raises(ValueError):
        interpolate_curve(fit, np.array([-0.2, 0.5]))


def test_med_crossing_closed_form():
    fit = fit_stub(DOSES5, [0.0, 0.1, 0.25, 0.4, 0.5])
    est = estimate_med(fit, MedSpec(delta=0.3))
    assert est.reached
    assert est.med == 0.6  # exact: 0.5 + (0.05 / 0.15) * 0.3


def test_med_reference_zero_vs_estimated():
    fit = fit_stub((0.0, 0.5, 1.0), [0.2, 0.35, 0.6])
    over_placebo = estimate_med(fit, MedSpec(delta=0.3, reference="estimated"))
    over_zero = estimate_med(fit, MedSpec(delta=0.3, reference="zero"))
    assert over_zero.med < over_placebo.med
    at_placebo = estimate_med(fit, MedSpec(delta=0.2, reference="zero"))
    assert at_placebo.med == 0.0  # already effective at dose 0


def test_med_not_reached_is_a_value():
    fit = fit_stub((0.0, 1.0), [0.0, 0.2])
    est = estimate_med(fit, MedSpec(delta=0.3))
    assert est == MedEstimate(False, est.med)
    assert math.isnan(est.med)
    assert "reached=False" in repr(est)


def test_med_monotone_in_delta():
    # seeded property loop: a larger required effect can only push the
    # MED right or out of reach
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        m = rng.integers(3, 7)
        doses = np.sort(rng.uniform(0.0, 1.0, m))
        doses[0] = 0.0
        mu = rng.uniform(0.0, 1.0, m)
        fit = fit_stub(tuple(doses), mu)
        d1, d2 = np.sort(rng.uniform(0.05, 0.8, 2))
        e1 = estimate_med(fit, MedSpec(delta=float(d1)))
        e2 = estimate_med(fit, MedSpec(delta=float(d2)))
        if e2.reached:
            assert e1.reached
            assert e1.med <= e2.med + 1e-12
        elif e1.reached:
            assert not e2.reached  # weaker requirement reached earlier only


def test_med_spec_validation():
    with pytest.raises(ValueError):
        MedSpec(delta=0.0)
    with pytest.raises(ValueError):
        MedSpec(reference="placebo")


def test_critical_value_order_statistic():
    stats = np.arange(1000.0)
    c, exc = critical_value_from_stats(stats, 0.05)
    assert c == 950.0
    assert exc == pytest.approx(0.049)
    # alpha so small the index caps at the top order statistic
    c_top, exc_top = critical_value_from_stats(stats, 1e-9)
    assert c_top == 999.0 and exc_top == 0.0


def test_critical_value_exceedance_band():
    rng = np.random.default_rng(6)
    for _ in range(200):
        n = int(rng.integers(20, 400))
        stats = rng.normal(0.0, 1.0, n)
        alpha = float(rng.uniform(0.01, 0.3))
        c, exc = critical_value_from_stats(stats, alpha)
        assert np.mean(stats > c) == pytest.approx(exc)
        assert alpha - 1.0 / n - 1e-12 <= exc < alpha
        # c is the smallest such threshold: any strictly lower sample
        # value would exceed alpha
        below = stats[stats < c]
        if below.size:
            assert np.mean(stats > below.max()) >= alpha


def _setup():
    return CalibrationSetup(
        current=TrialDesign((0.0, 0.5, 1.0), 4, 1.0),
        model_kind="identity",
        priors=PriorSet(tau=3.0),
        solver=SolverOptions(restarts=1),
    )


def test_calibration_cache_round_trip(cache_dir):
    setup = _setup()
    first = calibrate_critical_value(
        setup, alpha=0.1, n_replicates=60, seed=3, cache_dir=cache_dir
    )
    assert not first.from_cache
    assert first.null_stats.size == 60
    assert 0.1 - 1 / 60 - 1e-12 <= first.exceedance < 0.1

    again = calibrate_critical_value(
        setup, alpha=0.1, n_replicates=60, seed=3, cache_dir=cache_dir
    )
    assert again.from_cache
    assert again.critical_value == first.critical_value
    np.testing.assert_array_equal(again.null_stats, first.null_stats)

    loaded = load_cached_calibration(
        setup, alpha=0.1, n_replicates=60, seed=3, cache_dir=cache_dir
    )
    assert loaded is not None and loaded.from_cache
    assert loaded.critical_value == first.critical_value


def test_calibration_cache_miss_and_corruption(cache_dir):
    setup = _setup()
    assert (
        load_cached_calibration(setup, 0.1, 60, seed=9, cache_dir=cache_dir) is None
    )
    res = calibrate_critical_value(
        setup, alpha=0.1, n_replicates=60, seed=9, cache_dir=cache_dir
    )
    entries = list(cache_dir.glob("calib_*.json"))
    assert len(entries) == 1
    assert entries[0].name == f"calib_{res.fingerprint}.json"
    payload = json.loads(entries[0].read_text())
    assert payload["fingerprint"] == res.fingerprint

    entries[0].write_text("{ not json")
    assert (
        load_cached_calibration(setup, 0.1, 60, seed=9, cache_dir=cache_dir) is None
    )
    redo = calibrate_critical_value(
        setup, alpha=0.1, n_replicates=60, seed=9, cache_dir=cache_dir
    )
    assert not redo.from_cache
    assert redo.critical_value == res.critical_value
    assert json.loads(entries[0].read_text())["fingerprint"] == res.fingerprint


def test_calibration_fingerprint_sensitivity(cache_dir):
    setup = _setup()
    calibrate_critical_value(
        setup, alpha=0.1, n_replicates=60, seed=3, cache_dir=cache_dir
    )
    # a different alpha, seed, replicate count or prior misses the cache
    assert load_cached_calibration(setup, 0.2, 60, 3, cache_dir) is None
    assert load_cached_calibration(setup, 0.1, 50, 3, cache_dir) is None
    assert load_cached_calibration(setup, 0.1, 60, 4, cache_dir) is None
    other = CalibrationSetup(
        current=setup.current,
        model_kind="identity",
        priors=PriorSet(tau=2.0),
        solver=setup.solver,
    )
    assert load_cached_calibration(other, 0.1, 60, 3, cache_dir) is None


def test_calibration_insufficient_replicates():
    with pytest.raises(ValueError):
        calibrate_critical_value(_setup(), alpha=0.05, n_replicates=50)
    with pytest.raises(ValueError):
        calibrate_critical_value(_setup(), alpha=1.5, n_replicates=100)


def test_cache_dir_resolution(monkeypatch, tmp_path):
    assert resolve_cache_dir("/x/y") == resolve_cache_dir("/x/y")
    monkeypatch.setenv("DOSECURVE_CACHE_DIR", str(tmp_path / "env"))
    assert resolve_cache_dir() == tmp_path / "env"
    assert resolve_cache_dir(tmp_path / "arg") == tmp_path / "arg"
    monkeypatch.delenv("DOSECURVE_CACHE_DIR")
    assert resolve_cache_dir().name == "dosecurve"
