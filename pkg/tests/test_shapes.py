"""Shape library: calibration round-trips, conventions, analytic anchors."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from dosecurve.shapes import (
    DEFAULT_THRESHOLD,
    FAMILIES,
    MAX_EFFECT,
    REFERENCE_MED,
    CalibrationError,
    ShapeSpec,
    build_shape_manifest,
    calibrate_shape,
    eval_shape,
    standard_shapes,
    true_med,
)

MANIFEST = Path(__file__).resolve().parents[1] / "data" / "shape_manifest.json"


def test_families_are_the_twelve_benchmarks():
    assert FAMILIES == (
        "linear", "emax1", "emax2", "exponential1", "exponential2",
        "quadratic1", "quadratic2", "logistic1", "logistic2",
        "sigEmax", "power", "betaMod",
    )


def test_calibration_round_trip_hits_every_target():
    shapes = standard_shapes(DEFAULT_THRESHOLD)
    for family, spec in shapes.items():
        achieved = true_med(spec, DEFAULT_THRESHOLD)
        assert abs(achieved - REFERENCE_MED[family]) < 1e-6, family


def test_conventions_zero_at_origin_and_common_max():
    # a 4001-point sample brackets an interior peak to ~(dx)^2, so the
    # sampled max may undershoot by a few 1e-8; it must never overshoot
    xs = np.linspace(0.0, 1.0, 4001)
    for family, spec in standard_shapes(DEFAULT_THRESHOLD).items():
        ys = np.asarray(eval_shape(spec, xs))
        assert abs(ys[0]) < 1e-12, family
        assert ys.max() <= MAX_EFFECT + 1e-12, family
        assert ys.max() > MAX_EFFECT - 1e-7, family


def test_emax1_ed50_matches_the_closed_form():
    # With plateau MAX_EFFECT*(1+ed50), solving
    # MAX_EFFECT*(1+ed50)*x/(x+ed50) = threshold at x = target for ed50
    # gives target*(MAX_EFFECT - threshold)/(threshold - MAX_EFFECT*target).
    target = REFERENCE_MED["emax1"]
    thr = DEFAULT_THRESHOLD
    ed50 = target * (MAX_EFFECT - thr) / (thr - MAX_EFFECT * target)
    spec = standard_shapes(thr)["emax1"]
    assert abs(spec.value("ed50") - ed50) < 1e-9
    # and the curve actually passes through (target, threshold)
    assert abs(eval_shape(spec, target) - thr) < 1e-9


def test_linear_slope_is_pinned_by_normalization():
    spec = standard_shapes(DEFAULT_THRESHOLD)["linear"]
    assert spec.value("slope") == MAX_EFFECT
    assert true_med(spec, DEFAULT_THRESHOLD) == pytest.approx(0.6, abs=1e-9)


def test_quadratic_peak_value_is_exact():
    for family in ("quadratic1", "quadratic2"):
        spec = standard_shapes(DEFAULT_THRESHOLD)[family]
        peak = -spec.value("beta1") / (2.0 * spec.value("beta2"))
        assert 0.0 < peak <= 1.0
        assert eval_shape(spec, peak) == pytest.approx(MAX_EFFECT, abs=1e-12)


def test_infeasible_targets_raise_calibration_error():
    # a monotone curve capped at 0.5 cannot first cross 0.3 at dose 0.99
    # of the emax family (its MED tops out below that)
    with pytest.raises(CalibrationError):
        calibrate_shape("linear", 0.5)
    with pytest.raises(CalibrationError):
        calibrate_shape("betaMod", 0.9)


def test_target_and_threshold_validation():
    with pytest.raises(ValueError):
        calibrate_shape("nosuch", 0.3)
    with pytest.raises(ValueError):
        calibrate_shape("emax1", 1.5)
    with pytest.raises(ValueError):
        true_med(standard_shapes(DEFAULT_THRESHOLD)["linear"], -0.1)


def test_true_med_raises_when_threshold_unreachable():
    spec = ShapeSpec.make("linear", slope=0.2)
    with pytest.raises(ValueError):
        true_med(spec, DEFAULT_THRESHOLD)


def test_eval_shape_rejects_doses_outside_unit_interval():
    spec = standard_shapes(DEFAULT_THRESHOLD)["linear"]
    with pytest.raises(ValueError):
        eval_shape(spec, 1.2)
    with pytest.raises(ValueError):
        eval_shape(spec, np.array([0.0, -0.1]))


def test_shape_spec_validates_parameters():
    with pytest.raises(ValueError):
        ShapeSpec.make("emax1", emax=0.6)  # ed50 missing
    with pytest.raises(ValueError):
        ShapeSpec.make("emax1", emax=0.6, ed50=-0.1)  # must be positive
    with pytest.raises(ValueError):
        ShapeSpec.make("linear", slope=float("nan"))


def test_true_med_monotone_in_threshold():
    # property loop: raising the threshold can only move the MED right
    spec = standard_shapes(DEFAULT_THRESHOLD)["sigEmax"]
    rng = np.random.default_rng(7)
    for _ in range(50):
        t1, t2 = np.sort(rng.uniform(0.05, 0.45, 2))
        if t1 == t2:
            continue
        assert true_med(spec, t1) <= true_med(spec, t2) + 1e-9


def test_committed_manifest_matches_a_fresh_build():
    built = build_shape_manifest(DEFAULT_THRESHOLD)
    stored = json.loads(MANIFEST.read_text())
    assert stored["threshold"] == built["threshold"]
    assert stored["max_effect_convention"] == built["max_effect_convention"]
    by_family = {e["family"]: e for e in built["shapes"]}
    for entry in stored["shapes"]:
        fresh = by_family[entry["family"]]
        assert entry["base_form"] == fresh["base_form"]
        assert entry["target_med"] == fresh["target_med"]
        for key, val in entry["params"].items():
            assert val == pytest.approx(fresh["params"][key], rel=1e-12), (
                entry["family"], key,
            )
