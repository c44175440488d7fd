"""Benchmark dose-response shape library.

Twelve curve families share a common frame: zero mean response at dose 0
and a maximum mean response of 0.5 over the unit dose interval. Each
family keeps one free parameter that is calibrated so the curve first
crosses a response threshold at a requested minimum effective dose
(MED); everything else is a fixed convention. The calibrated shapes act
as ground truth for the simulation harness, and the full parameter set
is exported as a machine-readable manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq
from scipy.special import expit

__all__ = [
    "FAMILIES",
    "REFERENCE_MED",
    "CalibrationError",
    "ShapeSpec",
    "eval_shape",
    "true_med",
    "calibrate_shape",
    "standard_shapes",
    "build_shape_manifest",
]

#: Response threshold used throughout the benchmark suite.
DEFAULT_THRESHOLD = 0.3

#: Maximum mean effect every calibrated shape is normalized to.
MAX_EFFECT = 0.5

#: Benchmark MED targets (threshold 0.3) the free parameters are tuned to.
REFERENCE_MED: dict[str, float] = {
    "linear": 0.600,
    "emax1": 0.334,
    "emax2": 0.083,
    "exponential1": 0.916,
    "exponential2": 0.828,
    "quadratic1": 0.216,
    "quadratic2": 0.257,
    "logistic1": 0.713,
    "logistic2": 0.601,
    "sigEmax": 0.291,
    "power": 0.360,
    "betaMod": 0.075,
}

FAMILIES: tuple[str, ...] = tuple(REFERENCE_MED)


class CalibrationError(ValueError):
    """No parameter in the family attains the requested MED."""


@dataclass(frozen=True)
class ShapeSpec:
    """A fully parameterized dose-response curve on the unit interval.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    params : tuple of (str, float) pairs
        Complete parameter set; use :meth:`make` to build one and
        :meth:`value` to read a parameter back.
    """

    family: str
    params: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown shape family {self.family!r}")
        names = {name for name, _ in self.params}
        expected = set(_PARAM_NAMES[_base_form(self.family)])
        if names != expected:
            raise ValueError(
                f"family {self.family!r} needs parameters {sorted(expected)}, "
                f"got {sorted(names)}"
            )
        for name, value in self.params:
            if not np.isfinite(value):
                raise ValueError(f"parameter {name!r} must be finite, got {value!r}")
        for name in _POSITIVE_PARAMS.get(_base_form(self.family), ()):
            if self.value(name) <= 0.0:
                raise ValueError(f"parameter {name!r} must be positive")

    @classmethod
    def make(cls, family: str, **params: float) -> "ShapeSpec":
        return cls(family, tuple(sorted((k, float(v)) for k, v in params.items())))

    def value(self, name: str) -> float:
        for key, val in self.params:
            if key == name:
                return val
        raise KeyError(name)

    def as_dict(self) -> dict[str, float]:
        return dict(self.params)


# --- family base forms -------------------------------------------------

def _base_form(family: str) -> str:
    return family.rstrip("12")


def _eval_linear(p: Mapping[str, float], x: NDArray) -> NDArray:
    return p["slope"] * x


def _eval_emax(p: Mapping[str, float], x: NDArray) -> NDArray:
    return p["emax"] * x / (x + p["ed50"])


def _eval_exponential(p: Mapping[str, float], x: NDArray) -> NDArray:
    # scale carries the f(1) = MAX_EFFECT normalization.
    return p["scale"] * np.expm1(x / p["delta"])


def _eval_quadratic(p: Mapping[str, float], x: NDArray) -> NDArray:
    return p["beta1"] * x + p["beta2"] * x * x


def _eval_logistic(p: Mapping[str, float], x: NDArray) -> NDArray:
    base = expit(-p["x0"] / p["delta"])
    return p["scale"] * (expit((x - p["x0"]) / p["delta"]) - base)


def _eval_sigEmax(p: Mapping[str, float], x: NDArray) -> NDArray:
    xh = x ** p["hill"]
    return p["emax"] * xh / (xh + p["ed50"] ** p["hill"])


def _eval_power(p: Mapping[str, float], x: NDArray) -> NDArray:
    return p["scale"] * x ** p["exponent"]


def _eval_betaMod(p: Mapping[str, float], x: NDArray) -> NDArray:
    pp, q = p["p"], p["q"]
    mode = pp / (pp + q)
    norm = mode**pp * (1.0 - mode) ** q
    return p["scale"] * x**pp * (1.0 - x) ** q / norm


_EVAL: dict[str, Callable[[Mapping[str, float], NDArray], NDArray]] = {
    "linear": _eval_linear,
    "emax": _eval_emax,
    "exponential": _eval_exponential,
    "quadratic": _eval_quadratic,
    "logistic": _eval_logistic,
    "sigEmax": _eval_sigEmax,
    "power": _eval_power,
    "betaMod": _eval_betaMod,
}

_PARAM_NAMES: dict[str, tuple[str, ...]] = {
    "linear": ("slope",),
    "emax": ("emax", "ed50"),
    "exponential": ("scale", "delta"),
    "quadratic": ("beta1", "beta2"),
    "logistic": ("scale", "x0", "delta"),
    "sigEmax": ("emax", "ed50", "hill"),
    "power": ("scale", "exponent"),
    "betaMod": ("scale", "p", "q"),
}

_POSITIVE_PARAMS: dict[str, tuple[str, ...]] = {
    "emax": ("emax", "ed50"),
    "exponential": ("scale", "delta"),
    "logistic": ("scale", "delta"),
    "sigEmax": ("emax", "ed50", "hill"),
    "power": ("scale", "exponent"),
    "betaMod": ("scale", "p", "q"),
}


def eval_shape(spec: ShapeSpec, x: float | NDArray) -> float | NDArray:
    """Evaluate the mean response of ``spec`` at normalized dose ``x``.

    ``x`` may be a scalar or an array; every entry must lie in [0, 1].
    """
    arr = np.asarray(x, dtype=float)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"dose outside [0, 1]: {arr.min()!r}..{arr.max()!r}")
    out = _EVAL[_base_form(spec.family)](dict(spec.params), arr)
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def true_med(spec: ShapeSpec, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Smallest dose in [0, 1] whose mean response reaches ``threshold``.

    Located by bracketing the first upward crossing on a dense grid and
    bisecting the bracket down to 1e-10. Raises ``ValueError`` when the
    curve never reaches the threshold.
    """
    if threshold <= 0.0:
        raise ValueError(f"threshold must be positive, got {threshold!r}")
    xs = np.linspace(0.0, 1.0, 2001)
    ys = np.asarray(eval_shape(spec, xs))
    hits = np.nonzero(ys >= threshold)[0]
    if hits.size == 0:
        raise ValueError(
            f"shape {spec.family!r} never reaches threshold {threshold!r} on [0, 1]"
        )
    i = int(hits[0])
    if i == 0:
        return 0.0
    lo, hi = float(xs[i - 1]), float(xs[i])
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if eval_shape(spec, mid) >= threshold:
            hi = mid
        else:
            lo = mid
    return hi


# --- calibration -------------------------------------------------------
#
# Each builder maps the family's single free parameter to a complete
# ShapeSpec obeying the normalization conventions, together with a
# bracket over which the resulting MED is monotone (or at least crosses
# every reachable target exactly once).

def _build_emax(family: str, ed50: float) -> ShapeSpec:
    return ShapeSpec.make(family, emax=MAX_EFFECT * (1.0 + ed50), ed50=ed50)


def _build_exponential(family: str, delta: float) -> ShapeSpec:
    return ShapeSpec.make(
        family, delta=delta, scale=MAX_EFFECT / np.expm1(1.0 / delta)
    )


def _build_quadratic(family: str, peak: float) -> ShapeSpec:
    # f(x) = x/v - x^2/(2 v^2) peaks at x = v with value exactly 0.5.
    return ShapeSpec.make(family, beta1=1.0 / peak, beta2=-0.5 / peak**2)


def _logistic_delta(family: str) -> float:
    return {"logistic1": 0.10, "logistic2": 0.05}[family]


def _build_logistic(family: str, x0: float) -> ShapeSpec:
    delta = _logistic_delta(family)
    span = expit((1.0 - x0) / delta) - expit(-x0 / delta)
    return ShapeSpec.make(family, x0=x0, delta=delta, scale=MAX_EFFECT / span)


def _build_sigEmax(family: str, ed50: float) -> ShapeSpec:
    hill = 4.0
    return ShapeSpec.make(
        family, ed50=ed50, hill=hill, emax=MAX_EFFECT * (1.0 + ed50**hill)
    )


def _build_power(family: str, exponent: float) -> ShapeSpec:
    return ShapeSpec.make(family, scale=MAX_EFFECT, exponent=exponent)


def _build_betaMod(family: str, p: float) -> ShapeSpec:
    return ShapeSpec.make(family, scale=MAX_EFFECT, p=p, q=2.0)


_BUILDERS: dict[str, tuple[Callable[[str, float], ShapeSpec], float, float]] = {
    "emax": (_build_emax, 1e-6, 100.0),
    "exponential": (_build_exponential, 0.02, 50.0),
    "quadratic": (_build_quadratic, 0.02, 1.0),
    "logistic": (_build_logistic, -1.0, 3.0),
    "sigEmax": (_build_sigEmax, 0.01, 10.0),
    "power": (_build_power, 0.05, 20.0),
    "betaMod": (_build_betaMod, 0.02, 20.0),
}


def calibrate_shape(
    family: str, target_med: float, threshold: float = DEFAULT_THRESHOLD
) -> ShapeSpec:
    """Tune the family's free parameter so ``true_med`` hits ``target_med``.

    Raises
    ------
    CalibrationError
        If no parameter value in the family's admissible range attains
        the target (the target MED is outside the family's reach).
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown shape family {family!r}")
    if not 0.0 < target_med < 1.0:
        raise ValueError(f"target MED must lie in (0, 1), got {target_med!r}")

    if family == "linear":
        # Normalization pins the slope; the MED is not adjustable.
        spec = ShapeSpec.make(family, slope=MAX_EFFECT)
        if abs(true_med(spec, threshold) - target_med) > 1e-6:
            raise CalibrationError(
                f"linear shape with maximum effect {MAX_EFFECT} has "
                f"MED {threshold / MAX_EFFECT:.6g}, cannot reach {target_med!r}"
            )
        return spec

    build, lo, hi = _BUILDERS[_base_form(family)]

    def gap(c: float) -> float:
        return true_med(build(family, c), threshold) - target_med

    glo, ghi = gap(lo), gap(hi)
    if glo == 0.0:
        best = lo
    elif ghi == 0.0:
        best = hi
    elif np.sign(glo) == np.sign(ghi):
        raise CalibrationError(
            f"family {family!r} cannot reach MED {target_med!r} at "
            f"threshold {threshold!r} (reachable range endpoints "
            f"{glo + target_med:.4g}..{ghi + target_med:.4g})"
        )
    else:
        best = brentq(gap, lo, hi, xtol=1e-12, rtol=8.9e-16, maxiter=200)
    spec = build(family, float(best))
    achieved = true_med(spec, threshold)
    if abs(achieved - target_med) > 1e-6:
        raise CalibrationError(
            f"calibration of {family!r} stalled at MED {achieved!r} "
            f"(target {target_med!r})"
        )
    return spec


@lru_cache(maxsize=8)
def standard_shapes(threshold: float = DEFAULT_THRESHOLD) -> dict[str, ShapeSpec]:
    """All twelve benchmark shapes calibrated to :data:`REFERENCE_MED`."""
    return {
        family: calibrate_shape(family, REFERENCE_MED[family], threshold)
        for family in FAMILIES
    }


def build_shape_manifest(threshold: float = DEFAULT_THRESHOLD) -> dict:
    """Machine-readable record of every benchmark shape's parameters."""
    entries = []
    xs = np.linspace(0.0, 1.0, 4001)
    for family, spec in standard_shapes(threshold).items():
        ys = np.asarray(eval_shape(spec, xs))
        entries.append(
            {
                "family": family,
                "base_form": _base_form(family),
                "params": spec.as_dict(),
                "target_med": REFERENCE_MED[family],
                "achieved_med": true_med(spec, threshold),
                "max_effect": float(ys.max()),
                "value_at_zero": float(ys[0]),
            }
        )
    return {
        "threshold": threshold,
        "max_effect_convention": MAX_EFFECT,
        "shapes": entries,
    }
