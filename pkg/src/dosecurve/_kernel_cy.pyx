# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Fused objective/gradient evaluation, compiled backend.

Same contract as ``_kernel_numpy``: identical formulas, identical
exponent clipping, identical non-finite guard. A ``Handle`` caches the
packed arrays as C buffers once per fit so the per-iteration cost is a
single C pass over the grid.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite, log

cnp.import_array()

DEF EXP_CLIP = 200.0
DEF LOGIT_CLIP = 36.0
DEF POW_CLIP = 150.0
DEF Z_CEILING = 1e6  # must match transform.INVERSE_CEILING
DEF BAD_VALUE = -1e300


cdef inline double _sig(double u) nogil:
    # LOGIT_CLIP keeps the result strictly inside (0, 1); see the numpy
    # backend for the boundary-underflow rationale
    cdef double t
    if u > LOGIT_CLIP:
        u = LOGIT_CLIP
    elif u < -LOGIT_CLIP:
        u = -LOGIT_CLIP
    if u >= 0.0:
        return 1.0 / (1.0 + exp(-u))
    t = exp(u)
    return t / (1.0 + t)


cdef class Handle:
    cdef int model_kind, borrow, fix_placebo, free_e0, n_grid, n_mu, dim, n_int
    cdef int idx_gamma, idx_emax, idx_ed50, idx_lam, idx_e0, idx_a, idx_r
    cdef double[::1] doses, weights, st_a, st_b, nc, sc, nh, sh
    cdef double ssc, ssh, sigma_c, sigma_h, tau, prior_sign
    cdef double emax_mean, emax_sd, ed50_mean, ed50_sd, lam_shape, lam_rate
    cdef double e0_fixed, e0_mean, e0_sd, rho, eta, a_lo, a_hi, clamp_eps
    cdef double[::1] mu, z, gz, dz_dmu, dz_demax, dz_ded50, dz_dlam, dz_de0

    def __init__(self, p):
        self.model_kind = p.model_kind
        self.borrow = p.borrow
        self.fix_placebo = p.fix_placebo
        self.free_e0 = p.free_e0
        self.n_grid = p.n_grid
        self.n_mu = p.n_mu
        self.dim = p.dim
        self.idx_gamma = p.idx_gamma
        self.idx_emax = p.idx_emax
        self.idx_ed50 = p.idx_ed50
        self.idx_lam = p.idx_lam
        self.idx_e0 = p.idx_e0
        self.idx_a = p.idx_a
        self.idx_r = p.idx_r
        self.doses = np.array(p.doses, dtype=np.float64)
        self.weights = np.array(p.weights, dtype=np.float64)
        self.st_a = np.array(p.st_a, dtype=np.float64)
        self.st_b = np.array(p.st_b, dtype=np.float64)
        self.nc = np.array(p.nc, dtype=np.float64)
        self.sc = np.array(p.sc, dtype=np.float64)
        self.nh = np.array(p.nh, dtype=np.float64)
        self.sh = np.array(p.sh, dtype=np.float64)
        self.n_int = self.weights.shape[0]
        self.ssc = p.ssc
        self.ssh = p.ssh
        self.sigma_c = p.sigma_c
        self.sigma_h = p.sigma_h
        self.tau = p.tau
        self.prior_sign = p.prior_sign
        self.emax_mean = p.emax_mean
        self.emax_sd = p.emax_sd
        self.ed50_mean = p.ed50_mean
        self.ed50_sd = p.ed50_sd
        self.lam_shape = p.lam_shape
        self.lam_rate = p.lam_rate
        self.e0_fixed = p.e0_fixed
        self.e0_mean = p.e0_mean
        self.e0_sd = p.e0_sd
        self.rho = p.rho
        self.eta = p.eta
        self.a_lo = p.a_lo
        self.a_hi = p.a_hi
        self.clamp_eps = p.clamp_eps
        g = self.n_grid
        self.mu = np.empty(g)
        self.z = np.empty(g)
        self.gz = np.empty(g)
        self.dz_dmu = np.empty(g)
        self.dz_demax = np.empty(g)
        self.dz_ded50 = np.empty(g)
        self.dz_dlam = np.empty(g)
        self.dz_de0 = np.empty(g)


def prepare(p):
    """Bind a PackedObjective into the compiled evaluation handle."""
    return Handle(p)


def value_and_grad(Handle h, v):
    """Log-posterior and gradient at unconstrained parameter vector ``v``."""
    varr = np.array(v, dtype=np.float64)
    if varr.shape != (h.dim,):
        raise ValueError(
            f"parameter vector must have shape ({h.dim},), got {varr.shape}"
        )
    grad = np.zeros(h.dim)
    cdef double[::1] vv = varr
    cdef double[::1] gr = grad
    cdef double value = _eval(h, vv, gr)
    if value == BAD_VALUE:
        grad[:] = 0.0
    return value, grad


cdef double _eval(Handle h, double[::1] v, double[::1] grad):
    cdef int i, g = h.n_grid
    cdef bint sigmoid = h.model_kind == 1
    cdef double gamma, dgamma_du, emax = 0.0, demax_du = 0.0
    cdef double ed50 = 0.0, ded50_du = 0.0, lam = 0.0, dlam_du = 0.0, e0 = 0.0
    cdef double a = 1.0, da_du = 0.0, r = 0.0, sa, sm, u0
    cdef double lo, hi, u, den, gq, lng, t, pw, dz_dg, dg_dmu
    cdef double g_lo = 0.0, g_hi = 0.0, zi, dz_dlam_i
    cdef bint clamped_i
    cdef double s_sq, d, value, dJ_dgamma, pull
    cdef double dJ_demax = 0.0, dJ_ded50 = 0.0, dJ_dlam = 0.0, dJ_de0 = 0.0
    cdef double dJ_da = 0.0, dJ_dr = 0.0, mc, mh, resc, resh, quad, gmu_i

    # unpack mu
    for i in range(h.n_mu):
        h.mu[i + h.fix_placebo] = _sig(v[i])
    if h.fix_placebo:
        h.mu[0] = 0.0

    u0 = v[h.idx_gamma]
    if u0 > EXP_CLIP:
        gamma = exp(EXP_CLIP)
        dgamma_du = 0.0
    elif u0 < -EXP_CLIP:
        gamma = exp(-EXP_CLIP)
        dgamma_du = 0.0
    else:
        gamma = exp(u0)
        dgamma_du = gamma

    if sigmoid:
        u0 = v[h.idx_emax]
        if u0 > EXP_CLIP:
            emax = exp(EXP_CLIP)
            demax_du = 0.0
        elif u0 < -EXP_CLIP:
            emax = exp(-EXP_CLIP)
            demax_du = 0.0
        else:
            emax = exp(u0)
            demax_du = emax
        sa = _sig(v[h.idx_ed50])
        ed50 = sa
        ded50_du = sa * (1.0 - sa)
        u0 = v[h.idx_lam]
        if u0 > EXP_CLIP:
            lam = exp(EXP_CLIP)
            dlam_du = 0.0
        elif u0 < -EXP_CLIP:
            lam = exp(-EXP_CLIP)
            dlam_du = 0.0
        else:
            lam = exp(u0)
            dlam_du = lam
        e0 = v[h.idx_e0] if h.free_e0 else h.e0_fixed

    if h.borrow:
        sa = _sig(v[h.idx_a])
        a = h.a_lo + (h.a_hi - h.a_lo) * sa
        da_du = (h.a_hi - h.a_lo) * sa * (1.0 - sa)
        r = v[h.idx_r]

    # transform to latent dose scale
    if sigmoid:
        lo = e0 + h.clamp_eps * emax
        hi = e0 + (1.0 - h.clamp_eps) * emax
        # Responses outside the band map to exact constant ratios;
        # forming the ratio at the band edge would subtract nearly
        # equal products and leak 1/eps-amplified rounding noise into
        # the curvature penalty.
        g_lo = h.clamp_eps / (1.0 - h.clamp_eps)
        g_hi = (1.0 - h.clamp_eps) / h.clamp_eps
        for i in range(g):
            u = h.mu[i]
            if u <= lo:
                clamped_i = 1
                gq = g_lo
                den = 1.0
            elif u >= hi:
                clamped_i = 1
                gq = g_hi
                den = 1.0
            else:
                clamped_i = 0
                den = emax + e0 - u
                gq = (u - e0) / den
            lng = log(gq)
            t = lng / lam
            if fabs(t) > POW_CLIP:
                t = POW_CLIP if t > 0.0 else -POW_CLIP
                pw = exp(t)
                dz_dg = 0.0
                dz_dlam_i = 0.0
            else:
                pw = exp(t)
                dz_dg = ed50 * pw / (gq * lam)
                dz_dlam_i = -ed50 * pw * lng / (lam * lam)
            zi = ed50 * pw
            if zi > Z_CEILING:
                # flat latent ceiling (matches transform.inverse): the
                # point contributes a constant, no transform partials
                zi = Z_CEILING
                dz_dg = 0.0
                dz_dlam_i = 0.0
                h.dz_ded50[i] = 0.0
            else:
                h.dz_ded50[i] = pw
            h.z[i] = zi
            h.dz_dlam[i] = dz_dlam_i
            if clamped_i:
                # g constant on the clamp: only ed50 and lam move z
                h.dz_dmu[i] = 0.0
                h.dz_demax[i] = 0.0
                h.dz_de0[i] = 0.0
            else:
                dg_dmu = emax / (den * den)
                h.dz_dmu[i] = dz_dg * dg_dmu
                h.dz_demax[i] = dz_dg * (-gq / den)
                h.dz_de0[i] = -h.dz_dmu[i]
    else:
        for i in range(g):
            h.z[i] = h.mu[i]

    # curvature penalty and its pull on z
    for i in range(g):
        h.gz[i] = 0.0
    s_sq = 0.0
    for i in range(h.n_int):
        d = (
            h.st_a[i] * h.z[i + 2]
            - (h.st_a[i] + h.st_b[i]) * h.z[i + 1]
            + h.st_b[i] * h.z[i]
        )
        s_sq += d * d * h.weights[i]
        pull = -h.weights[i] * d / (gamma * gamma)
        h.gz[i + 2] += pull * h.st_a[i]
        h.gz[i + 1] -= pull * (h.st_a[i] + h.st_b[i])
        h.gz[i] += pull * h.st_b[i]

    value = -(gamma * gamma) / (2.0 * h.tau * h.tau)
    value += h.prior_sign * log(gamma)
    value += -s_sq / (2.0 * gamma * gamma)
    dJ_dgamma = -gamma / (h.tau * h.tau) + h.prior_sign / gamma
    dJ_dgamma += s_sq / (gamma * gamma * gamma)

    # parameter priors
    if sigmoid:
        value += -((emax - h.emax_mean) ** 2) / (2.0 * h.emax_sd * h.emax_sd)
        value += -((ed50 - h.ed50_mean) ** 2) / (2.0 * h.ed50_sd * h.ed50_sd)
        value += (h.lam_shape - 1.0) * log(lam) - h.lam_rate * lam
        dJ_demax = -(emax - h.emax_mean) / (h.emax_sd * h.emax_sd)
        dJ_ded50 = -(ed50 - h.ed50_mean) / (h.ed50_sd * h.ed50_sd)
        dJ_dlam = (h.lam_shape - 1.0) / lam - h.lam_rate
        if h.free_e0:
            value += -((e0 - h.e0_mean) ** 2) / (2.0 * h.e0_sd * h.e0_sd)
            dJ_de0 = -(e0 - h.e0_mean) / (h.e0_sd * h.e0_sd)
    if h.borrow:
        value += -((a - 1.0) ** 2) / (2.0 * h.eta * h.eta)
        value += -(r * r) / (2.0 * h.rho * h.rho)
        dJ_da = -(a - 1.0) / (h.eta * h.eta)
        dJ_dr = -r / (h.rho * h.rho)

    # likelihoods; h.gz switches from z-gradient to mu-gradient in place
    quad = 0.0
    for i in range(g):
        if h.borrow:
            mc = h.mu[i] + r
        else:
            mc = h.mu[i]
        quad += 2.0 * mc * h.sc[i] - mc * mc * h.nc[i]
        resc = (h.sc[i] - h.nc[i] * mc) / (h.sigma_c * h.sigma_c)
        resh = 0.0
        if h.borrow:
            dJ_dr += resc
            mh = a * h.mu[i] - r
            resh = (h.sh[i] - h.nh[i] * mh) / (h.sigma_h * h.sigma_h)
            dJ_da += h.mu[i] * resh
            dJ_dr -= resh
        if sigmoid:
            gmu_i = resc + a * resh + h.gz[i] * h.dz_dmu[i]
            dJ_demax += h.gz[i] * h.dz_demax[i]
            dJ_ded50 += h.gz[i] * h.dz_ded50[i]
            dJ_dlam += h.gz[i] * h.dz_dlam[i]
            if h.free_e0:
                dJ_de0 += h.gz[i] * h.dz_de0[i]
            h.gz[i] = gmu_i
        else:
            h.gz[i] = resc + a * resh + h.gz[i]
    value += (quad - h.ssc) / (2.0 * h.sigma_c * h.sigma_c)
    if h.borrow:
        quad = 0.0
        for i in range(g):
            mh = a * h.mu[i] - r
            quad += 2.0 * mh * h.sh[i] - mh * mh * h.nh[i]
        value += (quad - h.ssh) / (2.0 * h.sigma_h * h.sigma_h)

    # chain into unconstrained coordinates
    for i in range(h.n_mu):
        sm = _sig(v[i])
        grad[i] = h.gz[i + h.fix_placebo] * sm * (1.0 - sm)
    grad[h.idx_gamma] = dJ_dgamma * dgamma_du
    if sigmoid:
        grad[h.idx_emax] = dJ_demax * demax_du
        grad[h.idx_ed50] = dJ_ded50 * ded50_du
        grad[h.idx_lam] = dJ_dlam * dlam_du
        if h.free_e0:
            grad[h.idx_e0] = dJ_de0
    if h.borrow:
        grad[h.idx_a] = dJ_da * da_du
        grad[h.idx_r] = dJ_dr

    if not isfinite(value):
        return BAD_VALUE
    for i in range(h.dim):
        if not isfinite(grad[i]):
            return BAD_VALUE
    return value
