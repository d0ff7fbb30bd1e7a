"""Run configuration: one YAML file describing data, methods, and seeds.

Grammar (all keys under four top-level sections; unknown keys rejected):

    run:
      task: att | ate | transport
      methods: [ours+energy, pca+linear, energy, entropy, ipw, nn-head,
                unweighted, ...]        # rep+kernel pairs or bare names
      seeds: [0, 1, ...]
      output_dir: path                  # overridable via REPWEIGHT_OUTPUT_DIR
      rep_dim: 10
      sigma: 0.01
      standardize: false
      arm_weighting: uniform | frequency   # ate only
    data:
      synthetic: {d, n_source, confounder_dim, n_target?, noise_sd?}
      # or a CSV description:
      csv: path
      covariates: [col, ...]
      treatment: col?      outcome: col?      rct_indicator: col?
    train:
      learning_rate, max_epochs, patience, validation_fraction,
      batch_size (null = full batch), weight_decay, trunk_hidden, head_hidden
    kernel:
      gaussian_bandwidth: median | <number>
    solver:
      tol_abs, tol_rel, max_iters
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .qp import SolverConfig
from .repnet import TrainConfig

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_method"]

TASK_KINDS = ("att", "ate", "transport")
BARE_METHODS = ("energy", "linear", "gaussian", "entropy", "ipw", "nn-head", "unweighted")
REP_NAMES = ("ours", "pca", "ps")
KERNEL_NAMES = ("energy", "linear", "gaussian")


class ConfigError(ValueError):
    """The configuration file is structurally or semantically invalid."""


def parse_method(name: str) -> tuple[str | None, str | None]:
    """Split a method name into (representation, kernel).

    `entropy`, `ipw`, `nn-head`, `unweighted` have neither; a bare kernel
    name means kernel matching on raw covariates.
    """
    if name in ("entropy", "ipw", "nn-head", "unweighted"):
        return None, None
    if name in KERNEL_NAMES:
        return None, name
    if "+" in name:
        rep, _, kern = name.partition("+")
        if rep in REP_NAMES and kern in KERNEL_NAMES:
            return rep, kern
    raise ConfigError(
        f"unknown method {name!r}; expected one of {BARE_METHODS} or "
        f"<rep>+<kernel> with rep in {REP_NAMES} and kernel in {KERNEL_NAMES}"
    )


@dataclass(frozen=True)
class SyntheticSpec:
    d: int
    n_source: int
    confounder_dim: int
    n_target: int = 0
    noise_sd: float = 1.0


@dataclass(frozen=True)
class CsvSpec:
    path: str
    covariates: tuple
    treatment: str | None = None
    outcome: str | None = None
    rct_indicator: str | None = None


@dataclass(frozen=True)
class RunConfig:
    task: str
    methods: tuple
    seeds: tuple
    output_dir: str
    synthetic: SyntheticSpec | None = None
    csv: CsvSpec | None = None
    rep_dim: int = 10
    sigma: float = 0.01
    standardize: bool = False
    arm_weighting: str = "uniform"
    train: TrainConfig = field(default_factory=TrainConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    gaussian_bandwidth: object = "median"
    trunk_hidden: tuple = (200,)
    head_hidden: tuple = (200,)


def _require_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _parse_run(section: dict) -> dict:
    _require_keys(
        section,
        {"task", "methods", "seeds", "output_dir", "rep_dim", "sigma", "standardize", "arm_weighting"},
        "run",
    )
    task = section.get("task")
    if task not in TASK_KINDS:
        raise ConfigError(f"run.task must be one of {TASK_KINDS}, got {task!r}")
    methods = section.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ConfigError("run.methods must be a non-empty list")
    for m in methods:
        parse_method(str(m))
    seeds = section.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("run.seeds must be a non-empty list")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("run.seeds contains duplicates")
    try:
        seeds = tuple(int(s) for s in seeds)
    except (TypeError, ValueError):
        raise ConfigError("run.seeds must be integers")
    out = {
        "task": task,
        "methods": tuple(str(m) for m in methods),
        "seeds": seeds,
        "output_dir": str(section.get("output_dir", "out")),
        "rep_dim": int(section.get("rep_dim", 10)),
        "sigma": float(section.get("sigma", 0.01)),
        "standardize": bool(section.get("standardize", False)),
        "arm_weighting": str(section.get("arm_weighting", "uniform")),
    }
    if out["rep_dim"] < 1:
        raise ConfigError("run.rep_dim must be positive")
    if out["sigma"] < 0:
        raise ConfigError("run.sigma must be nonnegative")
    if out["arm_weighting"] not in ("uniform", "frequency"):
        raise ConfigError("run.arm_weighting must be uniform or frequency")
    return out


def _parse_data(section: dict, task: str) -> dict:
    _require_keys(
        section,
        {"synthetic", "csv", "covariates", "treatment", "outcome", "rct_indicator"},
        "data",
    )
    if ("synthetic" in section) == ("csv" in section):
        raise ConfigError("data must declare exactly one of `synthetic` or `csv`")
    if "synthetic" in section:
        spec = section["synthetic"] or {}
        _require_keys(spec, {"d", "n_source", "confounder_dim", "n_target", "noise_sd"}, "data.synthetic")
        for key in ("d", "n_source", "confounder_dim"):
            if key not in spec:
                raise ConfigError(f"data.synthetic.{key} is required")
        synthetic = SyntheticSpec(
            d=int(spec["d"]),
            n_source=int(spec["n_source"]),
            confounder_dim=int(spec["confounder_dim"]),
            n_target=int(spec.get("n_target", 0)),
            noise_sd=float(spec.get("noise_sd", 1.0)),
        )
        if synthetic.confounder_dim > synthetic.d:
            raise ConfigError("data.synthetic.confounder_dim cannot exceed d")
        if task == "transport" and synthetic.n_target <= 0:
            raise ConfigError("transport task needs data.synthetic.n_target > 0")
        return {"synthetic": synthetic, "csv": None}
    covariates = section.get("covariates")
    if not isinstance(covariates, list) or not covariates:
        raise ConfigError("data.covariates must be a non-empty list of column names")
    csv_spec = CsvSpec(
        path=str(section["csv"]),
        covariates=tuple(str(c) for c in covariates),
        treatment=section.get("treatment"),
        outcome=section.get("outcome"),
        rct_indicator=section.get("rct_indicator"),
    )
    if task in ("att", "ate") and csv_spec.treatment is None:
        raise ConfigError(f"{task} task needs data.treatment")
    if task == "transport" and (csv_spec.rct_indicator is None or csv_spec.treatment is None):
        raise ConfigError("transport task needs data.rct_indicator and data.treatment")
    return {"synthetic": None, "csv": csv_spec}


def _parse_train(section: dict, seeds) -> tuple[TrainConfig, tuple, tuple]:
    _require_keys(
        section,
        {
            "learning_rate",
            "max_epochs",
            "patience",
            "validation_fraction",
            "batch_size",
            "weight_decay",
            "trunk_hidden",
            "head_hidden",
        },
        "train",
    )
    batch = section.get("batch_size")
    try:
        cfg = TrainConfig(
            learning_rate=float(section.get("learning_rate", 0.01)),
            max_epochs=int(section.get("max_epochs", 300)),
            patience=int(section.get("patience", 3)),
            validation_fraction=float(section.get("validation_fraction", 0.2)),
            batch_size=None if batch in (None, "null") else int(batch),
            weight_decay=float(section.get("weight_decay", 0.0)),
            rng_seed=int(seeds[0]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    trunk_hidden = tuple(int(h) for h in section.get("trunk_hidden", [200]))
    head_hidden = tuple(int(h) for h in section.get("head_hidden", [200]))
    return cfg, trunk_hidden, head_hidden


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"YAML parse error: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    _require_keys(raw, {"run", "data", "train", "kernel", "solver"}, "top level")
    if "run" not in raw or "data" not in raw:
        raise ConfigError("config needs `run` and `data` sections")

    run = _parse_run(raw["run"] or {})
    data = _parse_data(raw["data"] or {}, run["task"])
    train_cfg, trunk_hidden, head_hidden = _parse_train(raw.get("train") or {}, run["seeds"])

    kernel_section = raw.get("kernel") or {}
    _require_keys(kernel_section, {"gaussian_bandwidth"}, "kernel")
    bandwidth = kernel_section.get("gaussian_bandwidth", "median")
    if bandwidth != "median":
        try:
            bandwidth = float(bandwidth)
        except (TypeError, ValueError):
            raise ConfigError("kernel.gaussian_bandwidth must be `median` or a number")
        if bandwidth <= 0:
            raise ConfigError("kernel.gaussian_bandwidth must be positive")

    solver_section = raw.get("solver") or {}
    _require_keys(solver_section, {"tol_abs", "tol_rel", "max_iters"}, "solver")
    solver = SolverConfig(
        tol_abs=float(solver_section.get("tol_abs", 1e-6)),
        tol_rel=float(solver_section.get("tol_rel", 1e-6)),
        max_iters=int(solver_section.get("max_iters", 20000)),
    )

    return RunConfig(
        **run,
        **data,
        train=train_cfg,
        solver=solver,
        gaussian_bandwidth=bandwidth,
        trunk_hidden=trunk_hidden,
        head_hidden=head_hidden,
    )
