"""Kernel backends: reference agreement, cross-backend, gradients, guards."""

from __future__ import annotations

import importlib

import numpy as np
import pytest

from conftest import make_spec
from dosecurve import kernel
from dosecurve.posterior import log_posterior, pack_objective
from dosecurve.solver import gradient_check, unpack_point

_np_backend = importlib.import_module("dosecurve._kernel_numpy")
try:
    _cy_backend = importlib.import_module("dosecurve._kernel_cy")
except ImportError:  # pragma: no cover - compiled kernel is optional
    _cy_backend = None

BACKENDS = [("numpy", _np_backend)] + (
    [("cython", _cy_backend)] if _cy_backend is not None else []
)

CONFIGS = [
    ("identity", False),
    ("identity", True),
    ("sigmoid_emax", False),
    ("sigmoid_emax", True),
]


def _random_points(packed, n, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, scale, (n, packed.dim))


@pytest.mark.parametrize("name,backend", BACKENDS, ids=[b[0] for b in BACKENDS])
@pytest.mark.parametrize("model_kind,borrow", CONFIGS)
def test_backend_value_matches_reference_posterior(name, backend, model_kind, borrow):
    spec = make_spec(model_kind, borrow=borrow, seed=11)
    packed = pack_objective(spec)
    handle = backend.prepare(packed)
    for i, v in enumerate(_random_points(packed, 30, seed=12)):
        val, grad = backend.value_and_grad(handle, v)
        point = unpack_point(packed, v)
        ref = log_posterior(spec, point)
        assert val == pytest.approx(ref, rel=1e-10, abs=1e-10), (name, i)
        assert grad.shape == (packed.dim,)
        assert np.all(np.isfinite(grad))


@pytest.mark.skipif(_cy_backend is None, reason="compiled kernel not built")
@pytest.mark.parametrize("model_kind,borrow", CONFIGS)
def test_backends_agree_bit_for_bit_in_structure(model_kind, borrow):
    spec = make_spec(model_kind, borrow=borrow, seed=21)
    packed = pack_objective(spec)
    handle_np = _np_backend.prepare(packed)
    handle_cy = _cy_backend.prepare(packed)
    for v in _random_points(packed, 50, seed=22, scale=1.0):
        val_n, grad_n = _np_backend.value_and_grad(handle_np, v)
        val_c, grad_c = _cy_backend.value_and_grad(handle_cy, v)
        assert val_c == pytest.approx(val_n, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(grad_c, grad_n, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("model_kind,borrow", CONFIGS)
def test_analytic_gradient_matches_finite_differences(model_kind, borrow):
    spec = make_spec(model_kind, borrow=borrow, seed=31)
    report = gradient_check(spec, n_points=20, seed=5)
    assert report.n_compared > 0
    assert report.max_rel_error <= 1e-4, (
        model_kind,
        borrow,
        report.max_rel_error,
        report.worst_coord,
    )


@pytest.mark.parametrize("name,backend", BACKENDS, ids=[b[0] for b in BACKENDS])
def test_extreme_coordinates_still_evaluate_finite(name, backend):
    # the packed coordinates are unconstrained; huge values must hit the
    # clip rails and come back as finite objective values, never nan
    for model_kind, borrow in CONFIGS:
        spec = make_spec(model_kind, borrow=borrow, seed=41)
        packed = pack_objective(spec)
        handle = backend.prepare(packed)
        rng = np.random.default_rng(42)
        for scale in (50.0, 500.0, 5000.0):
            v = rng.normal(0.0, scale, packed.dim)
            val, grad = backend.value_and_grad(handle, v)
            assert np.isfinite(val)
            assert np.all(np.isfinite(grad))
            point = unpack_point(packed, v)
            assert np.all(point.mu > 0.0) and np.all(point.mu < 1.0)
            assert point.gamma > 0.0
            if model_kind == "sigmoid_emax":
                assert 0.0 < point.theta.ed50 < 1.0
                assert point.theta.lam > 0.0


@pytest.mark.parametrize("name,backend", BACKENDS, ids=[b[0] for b in BACKENDS])
def test_clipped_coordinates_kill_the_gradient(name, backend):
    # past the exp clip the derivative is hard zero; past the logit clip
    # the sigmoid slope at the rail survives, but at ~2e-16 it cannot
    # pull an optimizer any further out
    spec = make_spec("sigmoid_emax", borrow=False, seed=43)
    packed = pack_objective(spec)
    handle = backend.prepare(packed)
    v = np.zeros(packed.dim)
    v[packed.idx_ed50] = -1e4  # far past the logit clip
    v[packed.idx_lam] = 1e4  # far past the exp clip
    _, grad = backend.value_and_grad(handle, v)
    assert abs(grad[packed.idx_ed50]) < 1e-9
    assert grad[packed.idx_lam] == 0.0


def test_active_backend_selection():
    assert kernel.active_backend() in ("cython", "numpy")
    if _cy_backend is not None:
        assert kernel.active_backend() == "cython"
    packed = pack_objective(make_spec("identity"))
    handle = kernel.prepare(packed)
    val, grad = kernel.value_and_grad(handle, np.zeros(packed.dim))
    assert np.isfinite(val)


def test_env_override_forces_numpy(monkeypatch):
    monkeypatch.setenv("DOSECURVE_KERNEL", "numpy")
    name, backend = kernel._choose()
    assert name == "numpy" and backend is _np_backend
    monkeypatch.setenv("DOSECURVE_KERNEL", "bogus")
    with pytest.raises(ValueError):
        kernel._choose()


def test_make_objective_closure():
    spec = make_spec("identity", seed=2)
    fun = kernel.make_objective(pack_objective(spec))
    v = np.full(pack_objective(spec).dim, 0.2)
    val, grad = fun(v)
    ref = log_posterior(spec, unpack_point(pack_objective(spec), v))
    assert val == pytest.approx(ref, rel=1e-10)
    assert grad.shape == v.shape
