"""Joint log-posterior for curvature-penalized dose-response estimation.

The model places independent per-dose Gaussian likelihoods around mean
responses mu_i, a curvature prior on the transformed means
z_i = inverse(mu_i) through a half-normal scale gamma with hyperprior
HN(tau^2), uniform priors on each mu_i over [0, 1], and (for the
sigmoid kind) normal/truncated-normal/gamma priors on the transform
parameters. With a historical trial attached, the current arm means
shift to mu_i + r and the historical ones to a * mu_i - r, where r is a
normal between-trial offset and a a truncated-normal scale.

Up to additive constants the objective maximized by the solver is

    -gamma^2 / (2 tau^2) + sign * log(gamma) - S^2 / (2 gamma^2)
    + log p(theta) + log p(a) + log p(r)
    - sum_trials sum_ij (y_ij - m_ij)^2 / (2 sigma^2)

with S the total curvature of z on the grid. ``sign`` is +1 under the
default ``curvature_prior_sign="paper"`` convention and -1 under
``"density"`` (the half-normal density's own log-gamma term).

Everything here is the plain-numpy reference implementation; the
compiled kernel and its numpy fallback must agree with it to float
precision (enforced by tests).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.typing import NDArray

from .curvature import DoseGrid, total_curvature
from .transform import DefaultModel, Theta, inverse

__all__ = [
    "TrialDataset",
    "PriorSet",
    "LatentPoint",
    "ObjectiveSpec",
    "PackedObjective",
    "log_prior",
    "log_likelihood",
    "log_posterior",
    "log_posterior_mu_batch",
    "pack_objective",
]

TRIAL_KINDS = ("current", "historical")


@dataclass(frozen=True)
class TrialDataset:
    """Per-dose response samples from one trial.

    ``grid_indices[k]`` is the grid position of the dose that
    ``responses[k]`` was observed at; doses without data simply do not
    appear. ``sigma`` is the known response standard deviation.
    """

    kind: str
    grid_indices: tuple[int, ...]
    responses: tuple[NDArray, ...]
    sigma: float

    def __post_init__(self) -> None:
        if self.kind not in TRIAL_KINDS:
            raise ValueError(f"trial kind must be one of {TRIAL_KINDS}, got {self.kind!r}")
        if len(self.grid_indices) != len(self.responses):
            raise ValueError("grid_indices and responses length mismatch")
        if len(self.grid_indices) == 0:
            raise ValueError("dataset must cover at least one dose")
        if len(set(self.grid_indices)) != len(self.grid_indices):
            raise ValueError("duplicate grid index in dataset")
        if min(self.grid_indices) < 0:
            raise ValueError("grid indices must be nonnegative")
        if self.sigma <= 0.0 or not np.isfinite(self.sigma):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        frozen = []
        for idx, y in zip(self.grid_indices, self.responses):
            arr = np.array(y, dtype=float).reshape(-1)
            if arr.size == 0:
                raise ValueError(f"empty response vector at grid index {idx}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite response at grid index {idx}")
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "responses", tuple(frozen))
        object.__setattr__(self, "grid_indices", tuple(int(i) for i in self.grid_indices))

    @property
    def n_total(self) -> int:
        return sum(y.size for y in self.responses)

    def counts(self, grid_size: int) -> NDArray:
        out = np.zeros(grid_size)
        for idx, y in zip(self.grid_indices, self.responses):
            if idx >= grid_size:
                raise ValueError(f"grid index {idx} outside grid of size {grid_size}")
            out[idx] = y.size
        return out

    def sums(self, grid_size: int) -> NDArray:
        out = np.zeros(grid_size)
        for idx, y in zip(self.grid_indices, self.responses):
            if idx >= grid_size:
                raise ValueError(f"grid index {idx} outside grid of size {grid_size}")
            out[idx] = y.sum()
        return out

    @cached_property
    def sum_sq(self) -> float:
        return float(sum(float(y @ y) for y in self.responses))


@dataclass(frozen=True)
class PriorSet:
    """Hyperparameters of every prior in the model.

    ``tau`` scales the half-normal hyperprior on the curvature scale
    gamma. The sigmoid transform priors are normal for emax, normal
    truncated to [0, 1] for ed50 and gamma-distributed (shape/rate) for
    the slope lam. ``e0_mean``/``e0_sd`` of ``None`` fix the transform
    baseline at ``e0_fixed`` instead of estimating it. ``rho`` and
    ``eta`` are the borrowing offset and scale prior widths, with the
    scale truncated to [b, 1/b].
    """

    tau: float
    emax_mean: float = 0.5
    emax_sd: float = 0.2
    ed50_mean: float = 0.5
    ed50_sd: float = 0.15
    lam_shape: float = 2.5
    lam_rate: float = 1.18
    e0_mean: float | None = None
    e0_sd: float | None = None
    e0_fixed: float = 0.0
    rho: float = 0.5
    eta: float = 0.2
    b: float = 1.0 / 3.0
    curvature_prior_sign: str = "paper"

    def __post_init__(self) -> None:
        positive = {
            "tau": self.tau,
            "emax_sd": self.emax_sd,
            "ed50_sd": self.ed50_sd,
            "lam_shape": self.lam_shape,
            "lam_rate": self.lam_rate,
            "rho": self.rho,
            "eta": self.eta,
        }
        for name, value in positive.items():
            if value <= 0.0 or not np.isfinite(value):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"b must lie in (0, 1), got {self.b!r}")
        if (self.e0_mean is None) != (self.e0_sd is None):
            raise ValueError("e0_mean and e0_sd must be set together")
        if self.e0_sd is not None and self.e0_sd <= 0.0:
            raise ValueError(f"e0_sd must be positive, got {self.e0_sd!r}")
        if self.curvature_prior_sign not in ("paper", "density"):
            raise ValueError(
                f"curvature_prior_sign must be 'paper' or 'density', "
                f"got {self.curvature_prior_sign!r}"
            )

    @property
    def sign(self) -> float:
        return 1.0 if self.curvature_prior_sign == "paper" else -1.0


@dataclass(frozen=True)
class LatentPoint:
    """One point in the latent parameter space the posterior is defined on."""

    mu: NDArray
    gamma: float
    theta: Theta | None = None
    a: float | None = None
    r: float | None = None

    def __post_init__(self) -> None:
        arr = np.array(self.mu, dtype=float).reshape(-1)
        arr.flags.writeable = False
        object.__setattr__(self, "mu", arr)
        if (self.a is None) != (self.r is None):
            raise ValueError("borrowing parameters a and r must be set together")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Grid, priors and data that together fix one posterior surface."""

    grid: DoseGrid
    model_kind: str
    priors: PriorSet
    data_current: TrialDataset
    data_historical: TrialDataset | None = None
    fix_placebo: bool = False
    clamp_epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if self.model_kind not in ("identity", "sigmoid_emax"):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.data_current.kind != "current":
            raise ValueError("data_current must have kind 'current'")
        if max(self.data_current.grid_indices) > self.grid.m:
            raise ValueError("current-trial grid index outside grid")
        if self.data_historical is not None:
            if self.data_historical.kind != "historical":
                raise ValueError("data_historical must have kind 'historical'")
            if max(self.data_historical.grid_indices) > self.grid.m:
                raise ValueError("historical-trial grid index outside grid")
        if not 0.0 < self.clamp_epsilon <= 0.01:
            raise ValueError(
                f"clamp_epsilon must lie in (0, 0.01], got {self.clamp_epsilon!r}"
            )

    @property
    def borrow(self) -> bool:
        return self.data_historical is not None

    @property
    def free_e0(self) -> bool:
        return self.model_kind == "sigmoid_emax" and self.priors.e0_mean is not None

    def model(self, theta: Theta | None) -> DefaultModel:
        return DefaultModel(self.model_kind, theta, self.clamp_epsilon)

    def log_posterior(self, point: LatentPoint) -> float:
        return log_posterior(self, point)


# --- reference evaluation ----------------------------------------------

def _check_point(spec: ObjectiveSpec, point: LatentPoint) -> None:
    if point.mu.size != spec.grid.m + 1:
        raise ValueError(
            f"mu has length {point.mu.size}, grid has {spec.grid.m + 1} points"
        )
    if spec.model_kind == "sigmoid_emax":
        if point.theta is None:
            raise ValueError("sigmoid_emax posterior needs point.theta")
        if not spec.free_e0 and point.theta.e0 != spec.priors.e0_fixed:
            raise ValueError(
                f"theta.e0 is fixed at {spec.priors.e0_fixed!r} by the priors, "
                f"got {point.theta.e0!r}"
            )
    elif point.theta is not None:
        raise ValueError("identity posterior takes no theta")
    if spec.borrow and point.a is None:
        raise ValueError("posterior with historical data needs point.a and point.r")
    if not spec.borrow and point.a is not None:
        raise ValueError("borrowing parameters given but no historical data")


def log_prior(
    point: LatentPoint,
    grid: DoseGrid,
    priors: PriorSet,
    model_kind: str,
    clamp_epsilon: float = 1e-6,
) -> float:
    """Joint log-prior density (constants dropped) at ``point``.

    Covers the uniform support of mu, the curvature prior on the
    transformed means given gamma, the half-normal hyperprior on gamma,
    the transform-parameter priors, and the borrowing priors when a and
    r are present. Returns ``-inf`` for points outside the prior
    support instead of raising.
    """
    mu = point.mu
    if mu.min() < 0.0 or mu.max() > 1.0:
        return -np.inf
    gamma = point.gamma
    if gamma <= 0.0 or not np.isfinite(gamma):
        return -np.inf

    total = -(gamma * gamma) / (2.0 * priors.tau * priors.tau)
    total += priors.sign * np.log(gamma)

    if model_kind == "sigmoid_emax":
        t = point.theta
        if t is None:
            raise ValueError("sigmoid_emax prior needs point.theta")
        if not 0.0 <= t.ed50 <= 1.0:
            return -np.inf
        total += -((t.emax - priors.emax_mean) ** 2) / (2.0 * priors.emax_sd**2)
        total += -((t.ed50 - priors.ed50_mean) ** 2) / (2.0 * priors.ed50_sd**2)
        total += (priors.lam_shape - 1.0) * np.log(t.lam) - priors.lam_rate * t.lam
        if priors.e0_mean is not None:
            total += -((t.e0 - priors.e0_mean) ** 2) / (2.0 * priors.e0_sd**2)
        model = DefaultModel(model_kind, t, clamp_epsilon)
    else:
        model = DefaultModel(model_kind, None, clamp_epsilon)

    z = np.asarray(inverse(model, mu))
    s = total_curvature(z, grid)
    total += -(s * s) / (2.0 * gamma * gamma)

    if point.a is not None:
        if not priors.b <= point.a <= 1.0 / priors.b:
            return -np.inf
        total += -((point.a - 1.0) ** 2) / (2.0 * priors.eta**2)
        total += -(point.r**2) / (2.0 * priors.rho**2)

    return float(total)


def log_likelihood(point: LatentPoint, data: TrialDataset) -> float:
    """Gaussian log-likelihood of one trial (constants dropped).

    Current-trial arm means are mu_i (+ r when borrowing parameters are
    present); historical ones are a * mu_i - r.
    """
    mu = point.mu
    if max(data.grid_indices) >= mu.size:
        raise ValueError("dataset grid index outside mu vector")
    if data.kind == "historical":
        if point.a is None or point.r is None:
            raise ValueError("historical likelihood needs point.a and point.r")
        means = point.a * mu[list(data.grid_indices)] - point.r
    else:
        shift = point.r if point.r is not None else 0.0
        means = mu[list(data.grid_indices)] + shift
    total = 0.0
    for m, y in zip(means, data.responses):
        total += float(y.sum()) * 2.0 * m - y.size * m * m
    total -= data.sum_sq
    return float(total / (2.0 * data.sigma**2))


def log_posterior(spec: ObjectiveSpec, point: LatentPoint) -> float:
    """Joint log-posterior (constants dropped); ``-inf`` outside support."""
    _check_point(spec, point)
    total = log_prior(
        point, spec.grid, spec.priors, spec.model_kind, spec.clamp_epsilon
    )
    if not np.isfinite(total):
        return -np.inf
    total += log_likelihood(point, spec.data_current)
    if spec.data_historical is not None:
        total += log_likelihood(point, spec.data_historical)
    return float(total)


def log_posterior_mu_batch(
    spec: ObjectiveSpec,
    mu_batch: NDArray,
    gamma: float,
    theta: Theta | None = None,
    a: float | None = None,
    r: float | None = None,
) -> NDArray:
    """Vectorized ``log_posterior`` over rows of ``mu_batch`` (K, M+1).

    Shared non-mu parameters are scalars; rows with any mu outside
    [0, 1] get ``-inf``. Used by the grid-search oracle, which sweeps
    very many mu vectors at fixed (gamma, theta, a, r).
    """
    mu_batch = np.asarray(mu_batch, dtype=float)
    if mu_batch.ndim != 2 or mu_batch.shape[1] != spec.grid.m + 1:
        raise ValueError(
            f"mu_batch must be (K, {spec.grid.m + 1}), got {mu_batch.shape}"
        )
    k = mu_batch.shape[0]
    out = np.full(k, -np.inf)
    feasible = np.all((mu_batch >= 0.0) & (mu_batch <= 1.0), axis=1)
    if gamma <= 0.0:
        return out

    base = -(gamma * gamma) / (2.0 * spec.priors.tau**2)
    base += spec.priors.sign * np.log(gamma)
    if spec.model_kind == "sigmoid_emax":
        if theta is None:
            raise ValueError("sigmoid_emax posterior needs theta")
        p = spec.priors
        if not 0.0 <= theta.ed50 <= 1.0:
            return out
        base += -((theta.emax - p.emax_mean) ** 2) / (2.0 * p.emax_sd**2)
        base += -((theta.ed50 - p.ed50_mean) ** 2) / (2.0 * p.ed50_sd**2)
        base += (p.lam_shape - 1.0) * np.log(theta.lam) - p.lam_rate * theta.lam
        if p.e0_mean is not None:
            base += -((theta.e0 - p.e0_mean) ** 2) / (2.0 * p.e0_sd**2)
    if a is not None:
        p = spec.priors
        if not p.b <= a <= 1.0 / p.b:
            return out
        base += -((a - 1.0) ** 2) / (2.0 * p.eta**2) - (r * r) / (2.0 * p.rho**2)

    model = spec.model(theta if spec.model_kind == "sigmoid_emax" else None)
    z = np.asarray(inverse(model, mu_batch))
    st_a, st_b = spec.grid.stencil()
    d = st_a * z[:, 2:] - (st_a + st_b) * z[:, 1:-1] + st_b * z[:, :-2]
    s_sq = d * d @ spec.grid.weights() if spec.grid.n_interior else np.zeros(k)
    vals = base - s_sq / (2.0 * gamma * gamma)

    g = spec.grid.m + 1
    for data in filter(None, (spec.data_current, spec.data_historical)):
        n = data.counts(g)
        s = data.sums(g)
        if data.kind == "historical":
            means = a * mu_batch - r
        else:
            means = mu_batch + (r if r is not None else 0.0)
        quad = means @ (2.0 * s) - (means * means) @ n - data.sum_sq
        vals = vals + quad / (2.0 * data.sigma**2)

    out[feasible] = vals[feasible]
    return out


# --- packed form for the objective kernels ------------------------------

@dataclass(frozen=True)
class PackedObjective:
    """Flat-array view of an ObjectiveSpec plus the free-parameter layout.

    The unconstrained optimization vector v is laid out as
    [mu logits..., log gamma, (log emax, logit ed50, log lam, (e0)),
    (scaled-logit a, r)]; index fields are -1 when a block is absent.
    Both objective kernels (compiled and numpy) consume exactly this.
    """

    model_kind: int
    borrow: int
    fix_placebo: int
    free_e0: int
    n_grid: int
    n_mu: int
    dim: int
    idx_gamma: int
    idx_emax: int
    idx_ed50: int
    idx_lam: int
    idx_e0: int
    idx_a: int
    idx_r: int
    doses: NDArray
    weights: NDArray
    st_a: NDArray
    st_b: NDArray
    nc: NDArray
    sc: NDArray
    nh: NDArray
    sh: NDArray
    ssc: float
    ssh: float
    sigma_c: float
    sigma_h: float
    tau: float
    prior_sign: float
    emax_mean: float
    emax_sd: float
    ed50_mean: float
    ed50_sd: float
    lam_shape: float
    lam_rate: float
    e0_fixed: float
    e0_mean: float
    e0_sd: float
    rho: float
    eta: float
    a_lo: float
    a_hi: float
    clamp_eps: float


def pack_objective(spec: ObjectiveSpec) -> PackedObjective:
    """Flatten ``spec`` into the kernel-ready array form."""
    g = spec.grid.m + 1
    sigmoid = spec.model_kind == "sigmoid_emax"
    free_e0 = spec.free_e0
    borrow = spec.borrow
    n_mu = g - (1 if spec.fix_placebo else 0)

    pos = n_mu
    idx_gamma = pos
    pos += 1
    idx_emax = idx_ed50 = idx_lam = idx_e0 = -1
    if sigmoid:
        idx_emax, idx_ed50, idx_lam = pos, pos + 1, pos + 2
        pos += 3
        if free_e0:
            idx_e0 = pos
            pos += 1
    idx_a = idx_r = -1
    if borrow:
        idx_a, idx_r = pos, pos + 1
        pos += 2

    hist = spec.data_historical
    p = spec.priors
    return PackedObjective(
        model_kind=1 if sigmoid else 0,
        borrow=int(borrow),
        fix_placebo=int(spec.fix_placebo),
        free_e0=int(free_e0),
        n_grid=g,
        n_mu=n_mu,
        dim=pos,
        idx_gamma=idx_gamma,
        idx_emax=idx_emax,
        idx_ed50=idx_ed50,
        idx_lam=idx_lam,
        idx_e0=idx_e0,
        idx_a=idx_a,
        idx_r=idx_r,
        doses=np.ascontiguousarray(spec.grid.doses),
        weights=np.ascontiguousarray(spec.grid.weights()),
        st_a=np.ascontiguousarray(spec.grid.stencil()[0]),
        st_b=np.ascontiguousarray(spec.grid.stencil()[1]),
        nc=np.ascontiguousarray(spec.data_current.counts(g)),
        sc=np.ascontiguousarray(spec.data_current.sums(g)),
        nh=np.ascontiguousarray(hist.counts(g) if hist else np.zeros(g)),
        sh=np.ascontiguousarray(hist.sums(g) if hist else np.zeros(g)),
        ssc=spec.data_current.sum_sq,
        ssh=hist.sum_sq if hist else 0.0,
        sigma_c=spec.data_current.sigma,
        sigma_h=hist.sigma if hist else 1.0,
        tau=p.tau,
        prior_sign=p.sign,
        emax_mean=p.emax_mean,
        emax_sd=p.emax_sd,
        ed50_mean=p.ed50_mean,
        ed50_sd=p.ed50_sd,
        lam_shape=p.lam_shape,
        lam_rate=p.lam_rate,
        e0_fixed=p.e0_fixed,
        e0_mean=p.e0_mean if p.e0_mean is not None else 0.0,
        e0_sd=p.e0_sd if p.e0_sd is not None else 1.0,
        rho=p.rho,
        eta=p.eta,
        a_lo=p.b,
        a_hi=1.0 / p.b,
        clamp_eps=spec.clamp_epsilon,
    )
