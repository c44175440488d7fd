"""Trial generation: seeds, streams, union grids, exact means."""

from __future__ import annotations

import numpy as np
import pytest

from dosecurve.shapes import standard_shapes
from dosecurve.trials import (
    CURRENT_DOSES,
    SCENARIO_HISTORICAL_DOSES,
    TrialDesign,
    build_grid,
    generate_current_trial,
    generate_historical_trial,
    grid_indices_for,
    replicate_seed,
)


def test_scenario_dose_tables():
    assert CURRENT_DOSES == (0.0, 0.15, 0.5, 0.8, 1.0)
    assert SCENARIO_HISTORICAL_DOSES[1] == CURRENT_DOSES
    assert SCENARIO_HISTORICAL_DOSES[2] == (0.0, 0.15, 0.2, 0.8, 1.0)
    assert SCENARIO_HISTORICAL_DOSES[3] == (0.0, 0.8, 1.0)
    assert SCENARIO_HISTORICAL_DOSES[4] is None


def test_replicate_seed_is_deterministic_and_distinct():
    d = TrialDesign((0.0, 0.5, 1.0), 5, 1.0)
    a = generate_current_trial(None, d, replicate_seed(7, 3, 0))
    b = generate_current_trial(None, d, replicate_seed(7, 3, 0))
    for ra, rb in zip(a.responses, b.responses):
        np.testing.assert_array_equal(ra, rb)
    # different replicate, master seed or stream all change the draw
    for other in (
        replicate_seed(7, 4, 0),
        replicate_seed(8, 3, 0),
        replicate_seed(7, 3, 1),
    ):
        c = generate_current_trial(None, d, other)
        assert not np.array_equal(a.responses[0], c.responses[0])


def test_current_and_historical_streams_are_independent():
    # the historical draw must not consume from the current stream:
    # generating with and without a historical trial leaves the current
    # responses bit-identical
    d = TrialDesign((0.0, 0.5, 1.0), 6, 1.0)
    cur_alone = generate_current_trial(None, d, replicate_seed(1, 0, 0))
    cur_with = generate_current_trial(None, d, replicate_seed(1, 0, 0))
    generate_historical_trial(None, d, replicate_seed(1, 0, 1))
    for ra, rb in zip(cur_alone.responses, cur_with.responses):
        np.testing.assert_array_equal(ra, rb)


def test_union_grid_for_partially_overlapping_designs():
    cur = TrialDesign(CURRENT_DOSES, 8, 1.0)
    hist = TrialDesign(SCENARIO_HISTORICAL_DOSES[2], 8, 1.0)
    grid, cidx, hidx = build_grid(cur, hist)
    np.testing.assert_allclose(grid.doses, (0.0, 0.15, 0.2, 0.5, 0.8, 1.0))
    assert cidx == (0, 1, 3, 4, 5)
    assert hidx == (0, 1, 2, 4, 5)


def test_identical_designs_share_the_grid():
    cur = TrialDesign(CURRENT_DOSES, 8, 1.0)
    grid, cidx, hidx = build_grid(cur, cur)
    np.testing.assert_allclose(grid.doses, CURRENT_DOSES)
    assert cidx == hidx == (0, 1, 2, 3, 4)
    grid_solo, cidx_solo, none_idx = build_grid(cur)
    np.testing.assert_allclose(grid_solo.doses, CURRENT_DOSES)
    assert cidx_solo == (0, 1, 2, 3, 4) and none_idx is None


def test_near_noiseless_means_follow_the_shape():
    # sigma must stay positive for fitting, so probe the mean structure
    # with noise far below the assertion tolerance
    shape = standard_shapes()["emax1"]
    d = TrialDesign(CURRENT_DOSES, 3, 1e-12)
    cur = generate_current_trial(shape, d, 0)
    from dosecurve.shapes import eval_shape

    want = eval_shape(shape, np.asarray(CURRENT_DOSES))
    for arm, m in zip(cur.responses, want):
        np.testing.assert_allclose(arm, m, rtol=0, atol=1e-10)

    hist = generate_historical_trial(shape, d, 0, true_a=1.3, true_r=0.2)
    for arm, m in zip(hist.responses, want):
        np.testing.assert_allclose(arm, 1.3 * m - 0.2, rtol=0, atol=1e-10)
    assert hist.kind == "historical"


def test_null_truth_is_flat_zero():
    d = TrialDesign((0.0, 1.0), 2, 1e-12)
    cur = generate_current_trial(None, d, 0)
    for arm in cur.responses:
        np.testing.assert_allclose(arm, 0.0, rtol=0, atol=1e-10)
    hist = generate_historical_trial(None, d, 0, true_a=0.7, true_r=0.1)
    for arm in hist.responses:
        np.testing.assert_allclose(arm, -0.1, rtol=0, atol=1e-10)


def test_grid_indices_for_rejects_off_grid_doses():
    grid, _, _ = build_grid(TrialDesign(CURRENT_DOSES, 2, 1.0))
    assert grid_indices_for(grid, (0.0, 0.8)) == (0, 3)
    with pytest.raises(ValueError):
        grid_indices_for(grid, (0.3,))


def test_trial_design_validation():
    with pytest.raises(ValueError):
        TrialDesign((0.5,))
    with pytest.raises(ValueError):
        TrialDesign((0.0, 1.5))
    with pytest.raises(ValueError):
        TrialDesign((-0.1, 1.0))
    with pytest.raises(ValueError):
        TrialDesign((0.0, 0.5, 0.5))
    with pytest.raises(ValueError):
        TrialDesign((0.5, 0.2))
    with pytest.raises(ValueError):
        TrialDesign((0.0, 1.0), n_per_arm=0)
    with pytest.raises(ValueError):
        TrialDesign((0.0, 1.0), sigma=-1.0)
    d = TrialDesign([0, 1])  # ints normalize to floats
    assert d.doses == (0.0, 1.0)


def test_generated_dataset_uses_the_supplied_union_grid():
    cur = TrialDesign(CURRENT_DOSES, 3, 1.0)
    hist = TrialDesign(SCENARIO_HISTORICAL_DOSES[3], 3, 1.0)
    grid, cidx, hidx = build_grid(cur, hist)
    data_c = generate_current_trial(None, cur, 0, grid)
    data_h = generate_historical_trial(None, hist, 0, grid=grid)
    assert data_c.grid_indices == cidx
    assert data_h.grid_indices == hidx
    assert len(data_h.responses) == len(hist.doses)
