"""Dose-scale transforms linking mean responses to a latent dose axis.

The curvature penalty acts on transformed means z_i = inverse(mu_i).
Two default-model kinds are supported: ``identity`` (z = mu, the linear
default) and ``sigmoid_emax`` (z is the dose at which a sigmoid Emax
curve attains the response mu, so means tracing such a curve map back
to an affine function of dose and carry no curvature).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "MODEL_KINDS",
    "INVERSE_CEILING",
    "Theta",
    "DefaultModel",
    "forward",
    "inverse",
]

MODEL_KINDS: tuple[str, ...] = ("identity", "sigmoid_emax")

#: Ceiling on the sigmoid inverse. Doses live on [0, 1]; a latent value
#: this large is already equivalent to "far beyond the dose range" for
#: the curvature functional, while letting the inverse grow without
#: bound (small lam with a clamped response) would poison the penalty's
#: second differences with float cancellation noise.
INVERSE_CEILING = 1e6

#: Exponent bound used when evaluating g**(1/lam) in log space; only
#: prevents overflow on the way to the ceiling (e**150 already maps far
#: above INVERSE_CEILING for any admissible ed50).
_POW_EXP_CAP = 150.0


@dataclass(frozen=True)
class Theta:
    """Sigmoid Emax curve parameters.

    ``e0`` is the response at dose 0, ``emax`` the asymptotic effect
    above ``e0``, ``ed50`` the dose of half-maximal effect and ``lam``
    the slope (hill) exponent.
    """

    e0: float
    emax: float
    ed50: float
    lam: float

    def __post_init__(self) -> None:
        for name in ("e0", "emax", "ed50", "lam"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"theta.{name} must be finite")
        if self.emax <= 0.0:
            raise ValueError(f"theta.emax must be positive, got {self.emax!r}")
        if self.ed50 <= 0.0:
            raise ValueError(f"theta.ed50 must be positive, got {self.ed50!r}")
        if self.lam <= 0.0:
            raise ValueError(f"theta.lam must be positive, got {self.lam!r}")


@dataclass(frozen=True)
class DefaultModel:
    """Transform kind plus its parameters and inverse-clamp margin.

    ``clamp_epsilon`` is the relative margin used by the sigmoid
    inverse: responses are clamped into
    [e0 + eps*emax, e0 + (1-eps)*emax] before inversion, which keeps the
    inverse (and through it the MAP objective) finite and defined for
    every real response at the cost of flattening the curvature penalty
    outside the band.
    """

    kind: str
    theta: Theta | None = None
    clamp_epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "identity" and self.theta is not None:
            raise ValueError("identity transform takes no theta")
        if self.kind == "sigmoid_emax" and self.theta is None:
            raise ValueError("sigmoid_emax transform requires theta")
        if not 0.0 < self.clamp_epsilon <= 0.01:
            raise ValueError(
                f"clamp_epsilon must lie in (0, 0.01], got {self.clamp_epsilon!r}"
            )


def forward(model: DefaultModel, x: float | NDArray) -> float | NDArray:
    """Mean response of the default model at latent dose ``x`` (x >= 0)."""
    arr = np.asarray(x, dtype=float)
    if arr.size and arr.min() < 0.0:
        raise ValueError(f"latent dose must be nonnegative, got {arr.min()!r}")
    if model.kind == "identity":
        out = arr.copy()
    else:
        t = model.theta
        xl = arr**t.lam
        out = t.e0 + t.emax * xl / (xl + t.ed50**t.lam)
    if np.ndim(x) == 0:
        return float(out)
    return out


def inverse(model: DefaultModel, y: float | NDArray) -> float | NDArray:
    """Latent dose at which the default model attains response ``y``.

    The identity kind never clamps. The sigmoid kind clamps ``y`` into
    the open response band first (see ``DefaultModel.clamp_epsilon``),
    applies the closed-form inverse
    ed50 * ((y - e0) / (emax + e0 - y))**(1/lam),
    and finally caps the result at :data:`INVERSE_CEILING`.

    Clamping happens on the response ratio rather than on ``y`` itself:
    a response outside the band maps to the exact constant
    (1-eps)/eps (or its reciprocal). Forming the ratio of an edge
    response instead would subtract two nearly equal products and leak
    rounding noise amplified by 1/eps into the curvature penalty.
    """
    arr = np.asarray(y, dtype=float)
    if model.kind == "identity":
        out = arr.copy()
    else:
        t = model.theta
        eps = model.clamp_epsilon
        lo = t.e0 + eps * t.emax
        hi = t.e0 + (1.0 - eps) * t.emax
        g_lo = eps / (1.0 - eps)
        g_hi = (1.0 - eps) / eps
        with np.errstate(divide="ignore", invalid="ignore"):
            g_raw = (arr - t.e0) / (t.emax + t.e0 - arr)
        g = np.where(arr <= lo, g_lo, np.where(arr >= hi, g_hi, g_raw))
        pw = np.exp(np.minimum(np.log(g) / t.lam, _POW_EXP_CAP))
        out = np.minimum(t.ed50 * pw, INVERSE_CEILING)
    if np.ndim(y) == 0:
        return float(out)
    return out
