"""Curvature functional: exactness anchors, invariances, validation."""

from __future__ import annotations

import numpy as np
import pytest

from dosecurve.curvature import DoseGrid, second_difference, total_curvature

UNIFORM5 = DoseGrid(np.linspace(0.0, 1.0, 5))


def random_grid(rng: np.random.Generator, n: int) -> DoseGrid:
    x = np.sort(rng.uniform(0.0, 1.0, n))
    x += np.linspace(0.0, 1e-3, n)  # enforce strict increase
    x = (x - x[0]) / (x[-1] - x[0])
    return DoseGrid(x)


def test_quadratic_on_the_uniform_five_point_grid_is_exactly_two():
    z = UNIFORM5.doses**2
    assert abs(total_curvature(z, UNIFORM5) - 2.0) < 1e-12


def test_uniform_five_point_weights():
    np.testing.assert_allclose(UNIFORM5.weights(), [0.375, 0.25, 0.375], atol=1e-15)


def test_weights_telescope_to_the_span():
    rng = np.random.default_rng(11)
    for n in (3, 4, 5, 9, 17):
        for _ in range(20):
            grid = random_grid(rng, n)
            span = grid.doses[-1] - grid.doses[0]
            assert abs(grid.weights().sum() - span) < 1e-12


def test_single_interior_point_owns_the_whole_span():
    grid = DoseGrid(np.array([0.0, 0.3, 1.0]))
    np.testing.assert_allclose(grid.weights(), [1.0])


def test_affine_sequences_have_zero_curvature_on_any_grid():
    rng = np.random.default_rng(5)
    for _ in range(100):
        grid = random_grid(rng, int(rng.integers(3, 12)))
        a, b = rng.normal(0.0, 5.0, 2)
        z = a + b * grid.doses
        assert total_curvature(z, grid) < 1e-9


def test_quadratic_curvature_closed_form_on_irregular_grids():
    # the three-point stencil is exact for quadratics, so
    # S(c * x^2) = 2|c| * sqrt(span) on every grid
    rng = np.random.default_rng(6)
    for _ in range(100):
        grid = random_grid(rng, int(rng.integers(3, 12)))
        c = rng.normal(0.0, 3.0)
        z = c * grid.doses**2
        span = grid.doses[-1] - grid.doses[0]
        expect = 2.0 * abs(c) * np.sqrt(span)
        assert total_curvature(z, grid) == pytest.approx(expect, abs=1e-9)


def test_adding_an_affine_part_leaves_curvature_unchanged():
    rng = np.random.default_rng(8)
    for _ in range(50):
        grid = random_grid(rng, 7)
        z = rng.normal(0.0, 1.0, 7)
        s0 = total_curvature(z, grid)
        s1 = total_curvature(z + 2.5 - 4.0 * grid.doses, grid)
        assert s1 == pytest.approx(s0, rel=1e-9, abs=1e-9)


def test_sine_curvature_approaches_the_integral_norm():
    # integral of (f'')^2 for f = sin(2 pi x) over [0, 1] is 8 pi^4
    target = np.sqrt(8.0) * np.pi**2
    errs = []
    for n in (101, 201, 401):
        grid = DoseGrid(np.linspace(0.0, 1.0, n))
        s = total_curvature(np.sin(2.0 * np.pi * grid.doses), grid)
        errs.append(abs(s - target) / target)
    assert errs[-1] < 1e-3
    assert errs[0] > errs[1] > errs[2]  # second-order refinement


def test_second_difference_matches_the_assembled_stencil():
    rng = np.random.default_rng(9)
    grid = random_grid(rng, 6)
    z = rng.normal(0.0, 1.0, 6)
    a, b = grid.stencil()
    for i in range(1, grid.m):
        manual = a[i - 1] * z[i + 1] - (a[i - 1] + b[i - 1]) * z[i] + b[i - 1] * z[i - 1]
        assert second_difference(z, grid, i) == pytest.approx(manual, rel=1e-12)


def test_second_difference_estimates_the_second_derivative():
    grid = DoseGrid(np.array([0.0, 0.4, 0.5, 0.65, 1.0]))
    z = 3.0 * grid.doses**2 - grid.doses
    for i in (1, 2, 3):
        assert second_difference(z, grid, i) == pytest.approx(6.0, rel=1e-10)


def test_two_point_grid_has_zero_curvature():
    grid = DoseGrid(np.array([0.0, 1.0]))
    assert grid.n_interior == 0
    assert total_curvature(np.array([5.0, -2.0]), grid) == 0.0
    assert grid.weights().size == 0


def test_grid_validation():
    with pytest.raises(ValueError):
        DoseGrid(np.array([0.5]))
    with pytest.raises(ValueError):
        DoseGrid(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ValueError):
        DoseGrid(np.array([0.2, 0.1]))
    with pytest.raises(ValueError):
        DoseGrid(np.array([-0.1, 1.0]))
    with pytest.raises(ValueError):
        DoseGrid(np.array([0.0, 1.2]))
    with pytest.raises(ValueError):
        DoseGrid(np.array([0.0, np.nan, 1.0]))


def test_length_and_index_checks():
    with pytest.raises(ValueError):
        total_curvature(np.zeros(4), UNIFORM5)
    with pytest.raises(ValueError):
        second_difference(np.zeros(5), UNIFORM5, 0)
    with pytest.raises(ValueError):
        second_difference(np.zeros(5), UNIFORM5, 4)


def test_grid_is_immutable():
    with pytest.raises(ValueError):
        UNIFORM5.doses[0] = 0.5
