"""Run configuration: strict YAML parsing into harness objects.

One YAML file describes a complete run (design, scenario, methods,
priors, solver, replication plan). Parsing is fail-fast: unknown keys,
wrong types and out-of-range values all raise ``ConfigError`` before
any computation starts. CLI flags may override selected values after
loading (flags win over file values).

The grammar is documented in docs/formats.md and mirrored by the
examples under configs/.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .inference import MED_REFERENCES, MedSpec
from .posterior import PriorSet
from .shapes import DEFAULT_THRESHOLD, FAMILIES, ShapeSpec, standard_shapes
from .simharness import MethodSpec, ScenarioConfig
from .solver import SolverOptions
from .trials import CURRENT_DOSES, SCENARIO_HISTORICAL_DOSES, TrialDesign

__all__ = [
    "ConfigError",
    "DataError",
    "RunConfig",
    "load_config",
    "parse_config",
]


class ConfigError(Exception):
    """Invalid or malformed run configuration."""


class DataError(Exception):
    """Invalid or malformed input data file."""


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; converts to a ScenarioConfig on demand."""

    methods: tuple[MethodSpec, ...]
    design: TrialDesign = field(
        default_factory=lambda: TrialDesign(CURRENT_DOSES, 40, 1.0)
    )
    scenario: int = 4
    shape: ShapeSpec | None = None
    true_a: float = 1.0
    true_r: float = 0.0
    hist_n_per_arm: int = 40
    med: MedSpec = field(default_factory=MedSpec)
    n_replicates: int = 1000
    master_seed: int = 0
    threads: int = 1
    alpha: float = 0.05
    calib_replicates: int = 2000
    calib_seed: int = 777
    out_dir: str | None = None

    def scenario_config(self) -> ScenarioConfig:
        return ScenarioConfig(
            scenario=self.scenario,
            shape=self.shape,
            methods=self.methods,
            n_replicates=self.n_replicates,
            master_seed=self.master_seed,
            current=self.design,
            hist_n_per_arm=self.hist_n_per_arm,
            true_a=self.true_a,
            true_r=self.true_r,
            med=self.med,
            alpha=self.alpha,
            calib_replicates=self.calib_replicates,
            calib_seed=self.calib_seed,
        )


# --- strict mapping helpers -------------------------------------------------

def _require_mapping(node, where: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{where} must be a mapping, got {type(node).__name__}")
    return node


def _check_keys(node: dict, allowed: set[str], where: str) -> None:
    unknown = set(node) - allowed
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in {where}; allowed: {sorted(allowed)}"
        )


def _number(node: dict, key: str, where: str, default=None, lo=None, hi=None):
    if key not in node:
        if default is None:
            raise ConfigError(f"{where} is missing required key {key!r}")
        return default
    val = node[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {val!r}")
    val = float(val)
    if lo is not None and val < lo:
        raise ConfigError(f"{where}.{key} must be >= {lo}, got {val}")
    if hi is not None and val > hi:
        raise ConfigError(f"{where}.{key} must be <= {hi}, got {val}")
    return val


def _integer(node: dict, key: str, where: str, default=None, lo=None):
    if key not in node:
        if default is None:
            raise ConfigError(f"{where} is missing required key {key!r}")
        return default
    val = node[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {val!r}")
    if lo is not None and val < lo:
        raise ConfigError(f"{where}.{key} must be >= {lo}, got {val}")
    return val


def _boolean(node: dict, key: str, where: str, default: bool) -> bool:
    val = node.get(key, default)
    if not isinstance(val, bool):
        raise ConfigError(f"{where}.{key} must be true or false, got {val!r}")
    return val


def _choice(node: dict, key: str, where: str, choices: tuple[str, ...], default: str):
    val = node.get(key, default)
    if val not in choices:
        raise ConfigError(f"{where}.{key} must be one of {choices}, got {val!r}")
    return val


# --- section parsers --------------------------------------------------------

def _parse_design(node, where: str = "design") -> TrialDesign:
    node = _require_mapping(node, where)
    _check_keys(node, {"doses", "n_per_arm", "sigma"}, where)
    doses = node.get("doses", list(CURRENT_DOSES))
    if not isinstance(doses, list) or not doses:
        raise ConfigError(f"{where}.doses must be a non-empty list")
    for d in doses:
        if isinstance(d, bool) or not isinstance(d, (int, float)):
            raise ConfigError(f"{where}.doses entries must be numbers, got {d!r}")
    n = _integer(node, "n_per_arm", where, default=40, lo=1)
    sigma = _number(node, "sigma", where, default=1.0, lo=0.0)
    try:
        return TrialDesign(tuple(float(d) for d in doses), n, sigma)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_shape(node) -> ShapeSpec | None:
    if node is None:
        return None
    if isinstance(node, str):
        if node in ("none", "null", "flat"):
            return None
        if node not in FAMILIES:
            raise ConfigError(
                f"scenario.shape {node!r} is not a standard family; "
                f"choose from {list(FAMILIES)} or give a mapping with family/params"
            )
        return standard_shapes(DEFAULT_THRESHOLD)[node]
    node = _require_mapping(node, "scenario.shape")
    _check_keys(node, {"family", "params"}, "scenario.shape")
    family = node.get("family")
    params = _require_mapping(node.get("params", {}), "scenario.shape.params")
    if not isinstance(family, str):
        raise ConfigError("scenario.shape.family must be a string")
    try:
        return ShapeSpec.make(family, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario.shape: {exc}") from exc


def _parse_priors(node) -> PriorSet:
    """Global prior settings; per-method tau/sign applied later."""
    if node is None:
        node = {}
    node = _require_mapping(node, "priors")
    _check_keys(
        node,
        {"emax", "ed50", "lambda", "e0", "e0_fixed_value", "rho", "eta", "b"},
        "priors",
    )

    def moments(key: str, default_mean: float, default_sd: float):
        sub = node.get(key)
        if sub is None:
            return default_mean, default_sd
        sub = _require_mapping(sub, f"priors.{key}")
        _check_keys(sub, {"mean", "sd"}, f"priors.{key}")
        return (
            _number(sub, "mean", f"priors.{key}", default=default_mean),
            _number(sub, "sd", f"priors.{key}", default=default_sd, lo=0.0),
        )

    emax_mean, emax_sd = moments("emax", 0.5, 0.2)
    ed50_mean, ed50_sd = moments("ed50", 0.5, 0.15)

    lam = node.get("lambda")
    lam_shape, lam_rate = 2.5, 1.18
    if lam is not None:
        lam = _require_mapping(lam, "priors.lambda")
        _check_keys(lam, {"shape", "rate", "scale"}, "priors.lambda")
        if "rate" in lam and "scale" in lam:
            raise ConfigError("priors.lambda: give rate or scale, not both")
        lam_shape = _number(lam, "shape", "priors.lambda", default=2.5, lo=1e-12)
        if "scale" in lam:
            lam_rate = 1.0 / _number(lam, "scale", "priors.lambda", lo=1e-12)
        else:
            lam_rate = _number(lam, "rate", "priors.lambda", default=1.18, lo=1e-12)

    e0 = node.get("e0", "fixed")
    e0_mean = e0_sd = None
    if e0 != "fixed":
        e0 = _require_mapping(e0, "priors.e0")
        _check_keys(e0, {"mean", "sd"}, "priors.e0")
        e0_mean = _number(e0, "mean", "priors.e0")
        e0_sd = _number(e0, "sd", "priors.e0", lo=1e-12)
    e0_fixed = _number(node, "e0_fixed_value", "priors", default=0.0)

    try:
        return PriorSet(
            tau=0.5,
            emax_mean=emax_mean,
            emax_sd=emax_sd,
            ed50_mean=ed50_mean,
            ed50_sd=ed50_sd,
            lam_shape=lam_shape,
            lam_rate=lam_rate,
            e0_mean=e0_mean,
            e0_sd=e0_sd,
            e0_fixed=e0_fixed,
            rho=_number(node, "rho", "priors", default=0.5, lo=1e-12),
            eta=_number(node, "eta", "priors", default=0.2, lo=1e-12),
            b=_number(node, "b", "priors", default=1.0 / 3.0, lo=1e-12, hi=1.0),
        )
    except ValueError as exc:
        raise ConfigError(f"priors: {exc}") from exc


def _parse_solver(node) -> SolverOptions:
    if node is None:
        return SolverOptions()
    node = _require_mapping(node, "solver")
    _check_keys(
        node,
        {"restarts", "seed", "max_iter", "grad_tol", "ftol", "perturb_scale"},
        "solver",
    )
    try:
        return SolverOptions(
            restarts=_integer(node, "restarts", "solver", default=5, lo=1),
            seed=_integer(node, "seed", "solver", default=0, lo=0),
            max_iter=_integer(node, "max_iter", "solver", default=500, lo=1),
            grad_tol=_number(node, "grad_tol", "solver", default=1e-6, lo=0.0),
            ftol=_number(node, "ftol", "solver", default=1e-11, lo=0.0),
            perturb_scale=_number(
                node, "perturb_scale", "solver", default=0.75, lo=0.0
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc


_DEFAULT_TAU = {"identity": 3.0, "sigmoid_emax": 0.5}


def _parse_method(node, index: int, priors: PriorSet, solver: SolverOptions) -> MethodSpec:
    where = f"methods[{index}]"
    node = _require_mapping(node, where)
    _check_keys(
        node,
        {
            "name",
            "model",
            "borrow",
            "tau",
            "fix_placebo",
            "curvature_prior_sign",
            "clamp_epsilon",
        },
        where,
    )
    model = _choice(node, "model", where, ("identity", "sigmoid_emax"), "sigmoid_emax")
    name = node.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{where}.name must be a non-empty string")
    tau = _number(node, "tau", where, default=_DEFAULT_TAU[model], lo=1e-12)
    sign = _choice(
        node, "curvature_prior_sign", where, ("paper", "density"), "paper"
    )
    try:
        return MethodSpec(
            name=name,
            model_kind=model,
            priors=replace(priors, tau=tau, curvature_prior_sign=sign),
            borrow=_boolean(node, "borrow", where, False),
            solver=solver,
            fix_placebo=_boolean(node, "fix_placebo", where, False),
            clamp_epsilon=_number(
                node, "clamp_epsilon", where, default=1e-6, lo=1e-300, hi=0.01
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# --- top level ---------------------------------------------------------------

_SECTIONS = {"run", "design", "scenario", "test", "methods", "solver", "priors"}


def parse_config(doc: dict) -> RunConfig:
    """Validate a parsed YAML document and build a RunConfig."""
    doc = _require_mapping(doc, "config")
    _check_keys(doc, _SECTIONS, "config")

    run = _require_mapping(doc.get("run", {}), "run")
    _check_keys(
        run,
        {
            "n_replicates",
            "master_seed",
            "threads",
            "alpha",
            "calib_replicates",
            "calib_seed",
            "out_dir",
        },
        "run",
    )
    alpha = _number(run, "alpha", "run", default=0.05)
    if not 0.0 < alpha < 0.5:
        raise ConfigError(f"run.alpha must be in (0, 0.5), got {alpha}")
    out_dir = run.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("run.out_dir must be a string path")

    test = _require_mapping(doc.get("test", {}), "test")
    _check_keys(test, {"delta", "med_reference"}, "test")
    try:
        med = MedSpec(
            delta=_number(test, "delta", "test", default=DEFAULT_THRESHOLD, lo=1e-12),
            reference=_choice(test, "med_reference", "test", MED_REFERENCES, "estimated"),
        )
    except ValueError as exc:
        raise ConfigError(f"test: {exc}") from exc

    scen = _require_mapping(doc.get("scenario", {}), "scenario")
    _check_keys(
        scen,
        {"pattern", "shape", "true_a", "true_r", "hist_n_per_arm"},
        "scenario",
    )
    pattern = _integer(scen, "pattern", "scenario", default=4)
    if pattern not in SCENARIO_HISTORICAL_DOSES:
        raise ConfigError(
            f"scenario.pattern must be one of {sorted(SCENARIO_HISTORICAL_DOSES)}, "
            f"got {pattern}"
        )

    priors = _parse_priors(doc.get("priors"))
    solver = _parse_solver(doc.get("solver"))

    methods_node = doc.get("methods")
    if not isinstance(methods_node, list) or not methods_node:
        raise ConfigError("config needs a non-empty methods list")
    methods = tuple(
        _parse_method(m, i, priors, solver) for i, m in enumerate(methods_node)
    )

    try:
        cfg = RunConfig(
            methods=methods,
            design=_parse_design(doc.get("design", {})),
            scenario=pattern,
            shape=_parse_shape(scen.get("shape")),
            true_a=_number(scen, "true_a", "scenario", default=1.0, lo=1e-12),
            true_r=_number(scen, "true_r", "scenario", default=0.0),
            hist_n_per_arm=_integer(scen, "hist_n_per_arm", "scenario", default=40, lo=1),
            med=med,
            n_replicates=_integer(run, "n_replicates", "run", default=1000, lo=0),
            master_seed=_integer(run, "master_seed", "run", default=0, lo=0),
            threads=_integer(run, "threads", "run", default=1, lo=1),
            alpha=alpha,
            calib_replicates=_integer(run, "calib_replicates", "run", default=2000, lo=1),
            calib_seed=_integer(run, "calib_seed", "run", default=777, lo=0),
            out_dir=out_dir,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    # Build once so ScenarioConfig's own validation runs at load time.
    try:
        cfg.scenario_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a YAML config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {p}: {exc}") from exc
    if doc is None:
        raise ConfigError(f"config file {p} is empty")
    return parse_config(doc)
