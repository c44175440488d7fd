"""Fused objective/gradient evaluation, pure numpy backend.

Evaluates the log-posterior of a ``PackedObjective`` and its analytic
gradient in the unconstrained parameterization (logit mu and ed50, log
gamma/emax/lam, scaled-logit a, identity r). The compiled backend in
``_kernel_cy`` implements the identical contract; ``kernel`` picks one
at import time.

Exponents are clipped (with matching zero derivatives) so every finite
input yields a finite value; a final guard maps any non-finite result
to a huge negative value with zero gradient, which line searches treat
as a rejected step.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .posterior import PackedObjective

__all__ = ["prepare", "value_and_grad"]


def prepare(p: PackedObjective) -> PackedObjective:
    """No binding step needed; the packed form is consumed directly."""
    return p

EXP_CLIP = 200.0
# |v| bound for logit-space coordinates: keeps expit strictly inside
# (0, 1) so unpacked ed50/mu/a stay valid when the optimizer walks a
# coordinate toward an open boundary (expit underflows to exactly 0
# past -745, which a parameter validator must reject)
LOGIT_CLIP = 36.0
POW_CLIP = 150.0
Z_CEILING = 1e6  # must match transform.INVERSE_CEILING
BAD_VALUE = -1e300


def _expit(u: NDArray) -> NDArray:
    u = np.clip(u, -LOGIT_CLIP, LOGIT_CLIP)
    out = np.empty_like(u)
    pos = u >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    t = np.exp(u[~pos])
    out[~pos] = t / (1.0 + t)
    return out


def _exp_clipped(u: float) -> tuple[float, float]:
    """exp clipped on both sides; derivative is zero past a clip."""
    if u > EXP_CLIP:
        return float(np.exp(EXP_CLIP)), 0.0
    if u < -EXP_CLIP:
        return float(np.exp(-EXP_CLIP)), 0.0
    val = float(np.exp(u))
    return val, val


def value_and_grad(p: PackedObjective, v: NDArray) -> tuple[float, NDArray]:
    """Log-posterior and gradient at unconstrained parameter vector ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (p.dim,):
        raise ValueError(f"parameter vector must have shape ({p.dim},), got {v.shape}")

    sm = _expit(v[: p.n_mu])
    dmu_dum = sm * (1.0 - sm)
    if p.fix_placebo:
        mu = np.empty(p.n_grid)
        mu[0] = 0.0
        mu[1:] = sm
    else:
        mu = sm

    gamma, dgamma_du = _exp_clipped(v[p.idx_gamma])

    sigmoid = p.model_kind == 1
    if sigmoid:
        emax, demax_du = _exp_clipped(v[p.idx_emax])
        sed = _expit(v[p.idx_ed50 : p.idx_ed50 + 1])[0]
        ed50, ded50_du = sed, sed * (1.0 - sed)
        lam, dlam_du = _exp_clipped(v[p.idx_lam])
        e0 = v[p.idx_e0] if p.free_e0 else p.e0_fixed

    if p.borrow:
        sa = _expit(v[p.idx_a : p.idx_a + 1])[0]
        a = p.a_lo + (p.a_hi - p.a_lo) * sa
        da_du = (p.a_hi - p.a_lo) * sa * (1.0 - sa)
        r = v[p.idx_r]
    else:
        a, r = 1.0, 0.0

    # --- transform to the latent dose scale ---
    if sigmoid:
        lo = e0 + p.clamp_eps * emax
        hi = e0 + (1.0 - p.clamp_eps) * emax
        below = mu <= lo
        above = mu >= hi
        clamped = below | above
        # Responses outside the band map to exact constant ratios;
        # forming the ratio at the band edge would subtract nearly
        # equal products and leak 1/eps-amplified rounding noise into
        # the curvature penalty.
        g_lo = p.clamp_eps / (1.0 - p.clamp_eps)
        g_hi = (1.0 - p.clamp_eps) / p.clamp_eps
        den = np.where(clamped, 1.0, emax + e0 - mu)
        gq = np.where(below, g_lo, np.where(above, g_hi, (mu - e0) / den))
        lng = np.log(gq)
        t = lng / lam
        tclip = np.abs(t) > POW_CLIP
        pw = np.exp(np.clip(t, -POW_CLIP, POW_CLIP))
        z = ed50 * pw
        # Flat ceiling on the latent value (matches transform.inverse):
        # capped points contribute a constant to the curvature stencil
        # and none of the transform partials survive.
        live = z <= Z_CEILING
        z = np.where(live, z, Z_CEILING)
        dead = tclip | ~live
        dz_dg = np.where(dead, 0.0, ed50 * pw / (gq * lam))
        # On the clamp g is an exact constant, so z depends on ed50 and
        # lam alone and the mu/emax/e0 partials vanish identically.
        dg_dmu = np.where(clamped, 0.0, emax / (den * den))
        dz_dmu = dz_dg * dg_dmu
        dz_demax = dz_dg * np.where(clamped, 0.0, -gq / den)
        dz_ded50 = np.where(live, pw, 0.0)
        dz_dlam = np.where(dead, 0.0, -z * lng / (lam * lam))
        if p.free_e0:
            # dg/de0 = -dg/dmu off the clamp, zero on it
            dz_de0 = -dz_dmu
    else:
        z = mu

    # --- curvature penalty and gamma terms ---
    if p.weights.size:
        d = p.st_a * z[2:] - (p.st_a + p.st_b) * z[1:-1] + p.st_b * z[:-2]
        s_sq = float(np.sum(d * d * p.weights))
    else:
        s_sq = 0.0

    value = -(gamma * gamma) / (2.0 * p.tau * p.tau)
    value += p.prior_sign * np.log(gamma)
    value += -s_sq / (2.0 * gamma * gamma)
    dJ_dgamma = -gamma / (p.tau * p.tau) + p.prior_sign / gamma
    dJ_dgamma += s_sq / (gamma * gamma * gamma)

    gz = np.zeros(p.n_grid)
    if p.weights.size:
        pull = -p.weights * d / (gamma * gamma)
        gz[2:] += pull * p.st_a
        gz[1:-1] -= pull * (p.st_a + p.st_b)
        gz[:-2] += pull * p.st_b

    # --- parameter priors ---
    if sigmoid:
        value += -((emax - p.emax_mean) ** 2) / (2.0 * p.emax_sd**2)
        value += -((ed50 - p.ed50_mean) ** 2) / (2.0 * p.ed50_sd**2)
        value += (p.lam_shape - 1.0) * np.log(lam) - p.lam_rate * lam
        dJ_demax = -(emax - p.emax_mean) / p.emax_sd**2
        dJ_ded50 = -(ed50 - p.ed50_mean) / p.ed50_sd**2
        dJ_dlam = (p.lam_shape - 1.0) / lam - p.lam_rate
        if p.free_e0:
            value += -((e0 - p.e0_mean) ** 2) / (2.0 * p.e0_sd**2)
            dJ_de0 = -(e0 - p.e0_mean) / p.e0_sd**2
    if p.borrow:
        value += -((a - 1.0) ** 2) / (2.0 * p.eta**2) - (r * r) / (2.0 * p.rho**2)
        dJ_da = -(a - 1.0) / p.eta**2
        dJ_dr = -r / p.rho**2

    # --- Gaussian likelihoods via per-dose sufficient statistics ---
    mc = mu + r if p.borrow else mu
    value += (2.0 * (mc @ p.sc) - (mc * mc) @ p.nc - p.ssc) / (2.0 * p.sigma_c**2)
    resc = (p.sc - p.nc * mc) / (p.sigma_c**2)
    gmu = resc.copy()
    if p.borrow:
        dJ_dr += float(resc.sum())
        mh = a * mu - r
        value += (2.0 * (mh @ p.sh) - (mh * mh) @ p.nh - p.ssh) / (2.0 * p.sigma_h**2)
        resh = (p.sh - p.nh * mh) / (p.sigma_h**2)
        gmu += a * resh
        dJ_da += float(mu @ resh)
        dJ_dr -= float(resh.sum())

    # --- curvature chain into mu and transform parameters ---
    if sigmoid:
        gmu += gz * dz_dmu
        dJ_demax += float(gz @ dz_demax)
        dJ_ded50 += float(gz @ dz_ded50)
        dJ_dlam += float(gz @ dz_dlam)
        if p.free_e0:
            dJ_de0 += float(gz @ dz_de0)
    else:
        gmu += gz

    # --- chain rule into the unconstrained coordinates ---
    grad = np.zeros(p.dim)
    grad[: p.n_mu] = (gmu[1:] if p.fix_placebo else gmu) * dmu_dum
    grad[p.idx_gamma] = dJ_dgamma * dgamma_du
    if sigmoid:
        grad[p.idx_emax] = dJ_demax * demax_du
        grad[p.idx_ed50] = dJ_ded50 * ded50_du
        grad[p.idx_lam] = dJ_dlam * dlam_du
        if p.free_e0:
            grad[p.idx_e0] = dJ_de0
    if p.borrow:
        grad[p.idx_a] = dJ_da * da_du
        grad[p.idx_r] = dJ_dr

    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        return BAD_VALUE, np.zeros(p.dim)
    return float(value), grad
