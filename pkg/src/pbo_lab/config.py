"""Declarative experiment configuration.

A config is a flat key-value file with one section per concern. Every field
has a per-environment default mirroring the benchmark hyperparameter tables,
so a minimal file only names the environment and algorithm; everything else
resolves explicitly and round-trips through ``render``/``parse`` unchanged.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "default_config",
    "parse_config",
    "render_config",
    "apply_preset",
    "method_label",
    "ENVIRONMENTS",
    "ALGORITHMS",
    "PBO_VARIANTS",
    "LOSSES",
]

ENVIRONMENTS = ("chain_walk", "lqr", "car_on_hill", "bicycle")
ALGORITHMS = ("fqi", "profqi", "dqn", "prodqn")
PBO_VARIANTS = ("linear", "mlp", "structured_finite", "structured_lqr", "closed_form")
LOSSES = ("eq3", "eq4")


class ConfigError(ValueError):
    """Invalid experiment configuration; carries the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    # [experiment]
    environment: str = "chain_walk"
    algorithm: str = "profqi"
    pbo_variant: str = "linear"
    loss: str = "eq3"
    bellman_iterations: int = 5
    seeds: tuple[int, ...] = (0,)
    # [environment]
    gamma: float = 0.9
    n_states: int = 20
    success_prob: float = 0.9
    reward_states: tuple[int, ...] = (9, 10)
    horizon: int = 0  # 0 means infinite
    # [dataset]
    dataset_size: int = 400
    # [family]
    family_kind: str = "tabular"
    family_hidden: tuple[int, ...] = ()
    fixed_aa: float = -1.20
    # [params] (the sampled value-function parameter set)
    param_count: int = 100
    param_std: float = 1.0
    # [operator]
    operator_hidden: tuple[int, ...] = ()
    operator_std: float = 5e-6
    # [optimizer]
    epochs: int = 1000
    steps_per_epoch: int = 5
    batch_size: int = 20
    param_batch_size: int = 100
    lr_start: float = 1e-2
    lr_end: float = 1e-7
    fit_steps: int = 400
    patience: int = 100
    # [online]
    buffer_capacity: int = 10_000
    initial_samples: int = 10_000
    grad_steps_per_env_step: int = 2
    eps_start: float = 1.0
    eps_end: float = 0.01
    episode_steps: int = 20
    # [evaluation]
    eval_steps: int = 15
    eval_grid: int = 17
    eval_episodes: int = 5
    eval_horizon: int = 0  # 0 means the environment horizon


_SECTIONS = {
    "experiment": (
        "environment", "algorithm", "pbo_variant", "loss", "bellman_iterations", "seeds",
    ),
    "environment": ("gamma", "n_states", "success_prob", "reward_states", "horizon"),
    "dataset": ("dataset_size",),
    "family": ("family_kind", "family_hidden", "fixed_aa"),
    "params": ("param_count", "param_std"),
    "operator": ("operator_hidden", "operator_std"),
    "optimizer": (
        "epochs", "steps_per_epoch", "batch_size", "param_batch_size",
        "lr_start", "lr_end", "fit_steps", "patience",
    ),
    "online": (
        "buffer_capacity", "initial_samples", "grad_steps_per_env_step",
        "eps_start", "eps_end", "episode_steps",
    ),
    "evaluation": ("eval_steps", "eval_grid", "eval_episodes", "eval_horizon"),
}

_FIELD_SECTION = {name: sec for sec, names in _SECTIONS.items() for name in names}

# per-environment table defaults (offline unless the algorithm is online)
_ENV_DEFAULTS: dict[str, dict] = {
    "chain_walk": dict(
        gamma=0.9, n_states=20, success_prob=0.9, reward_states=(9, 10), horizon=0,
        dataset_size=400, family_kind="tabular", family_hidden=(),
        param_count=100, param_std=1.0,
        pbo_variant="linear", operator_hidden=(80,), operator_std=5e-6,
        bellman_iterations=5, epochs=1000, steps_per_epoch=5,
        batch_size=20, param_batch_size=100, lr_start=1e-2, lr_end=1e-7,
        fit_steps=400, patience=100, eval_steps=15,
    ),
    "lqr": dict(
        gamma=1.0, horizon=0, dataset_size=121,
        family_kind="quadratic", family_hidden=(), fixed_aa=-1.20,
        param_count=5, param_std=1.0,
        pbo_variant="structured_lqr", operator_hidden=(8,), operator_std=5e-6,
        bellman_iterations=2, epochs=1000, steps_per_epoch=4,
        batch_size=121, param_batch_size=5, lr_start=1e-2, lr_end=1e-5,
        fit_steps=800, patience=100, eval_steps=8,
    ),
    "car_on_hill": dict(
        gamma=0.95, horizon=100, dataset_size=5500,
        family_kind="mlp", family_hidden=(30,),
        param_count=30, param_std=0.2,
        pbo_variant="mlp", operator_hidden=(302, 302, 302, 302), operator_std=5e-7,
        bellman_iterations=9, epochs=1000, steps_per_epoch=10,
        batch_size=500, param_batch_size=30, lr_start=1e-3, lr_end=5e-7,
        fit_steps=1200, patience=30, eval_steps=15, eval_grid=17,
    ),
    "bicycle": dict(
        gamma=0.99, horizon=50_000, dataset_size=70_000,
        family_kind="mlp", family_hidden=(30,),
        param_count=50, param_std=0.2,
        pbo_variant="mlp", operator_hidden=(302, 302, 302), operator_std=5e-7,
        bellman_iterations=8, epochs=500, steps_per_epoch=20,
        batch_size=1000, param_batch_size=25, lr_start=1e-4, lr_end=1e-7,
        fit_steps=1200, patience=7, eval_steps=8, eval_episodes=5,
    ),
}

# online-table overrides applied on top of the environment defaults
_ONLINE_DEFAULTS: dict[str, dict] = {
    "bicycle": dict(
        dataset_size=10_000, buffer_capacity=10_000, initial_samples=10_000,
        batch_size=500, grad_steps_per_env_step=2, eps_start=1.0, eps_end=0.01,
        episode_steps=20, fit_steps=6000, param_count=30, param_batch_size=30,
        epochs=4000, steps_per_epoch=25, operator_std=5e-7,
    ),
}

_ONLINE_LR = {
    ("bicycle", "dqn"): (1e-4, 1e-6),
    ("bicycle", "prodqn"): (1e-5, 1e-7),
}


def default_config(environment: str, algorithm: str = "profqi", **overrides) -> ExperimentConfig:
    """Config with every field at its table default for the environment."""
    if environment not in ENVIRONMENTS:
        raise ConfigError("experiment.environment", f"unknown environment {environment!r}")
    if algorithm not in ALGORITHMS:
        raise ConfigError("experiment.algorithm", f"unknown algorithm {algorithm!r}")
    values = dict(_ENV_DEFAULTS[environment])
    if algorithm in ("dqn", "prodqn"):
        values.update(_ONLINE_DEFAULTS.get(environment, {}))
        if (environment, algorithm) in _ONLINE_LR:
            values["lr_start"], values["lr_end"] = _ONLINE_LR[(environment, algorithm)]
    cfg = replace(
        ExperimentConfig(environment=environment, algorithm=algorithm), **values
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    def bad(name, msg):
        raise ConfigError(f"{_FIELD_SECTION.get(name, 'experiment')}.{name}", msg)

    if cfg.environment not in ENVIRONMENTS:
        bad("environment", f"unknown environment {cfg.environment!r}")
    if cfg.algorithm not in ALGORITHMS:
        bad("algorithm", f"unknown algorithm {cfg.algorithm!r}")
    if cfg.pbo_variant not in PBO_VARIANTS:
        bad("pbo_variant", f"unknown operator variant {cfg.pbo_variant!r}")
    if cfg.loss not in LOSSES:
        bad("loss", f"unknown loss {cfg.loss!r}")
    if cfg.loss == "eq4" and cfg.pbo_variant != "linear":
        bad("loss", "the fixed-point loss requires the linear operator variant")
    if cfg.algorithm in ("profqi", "prodqn") and cfg.bellman_iterations < 1:
        bad("bellman_iterations", "must be >= 1 for operator-learning algorithms")
    if cfg.bellman_iterations < 0:
        bad("bellman_iterations", "must be >= 0")
    if not cfg.seeds:
        bad("seeds", "at least one seed is required")
    if cfg.pbo_variant == "structured_finite" and cfg.family_kind != "tabular":
        bad("pbo_variant", "structured_finite requires the tabular family")
    if cfg.pbo_variant == "structured_lqr" and cfg.family_kind != "quadratic":
        bad("pbo_variant", "structured_lqr requires the quadratic family")
    if cfg.pbo_variant == "closed_form" and cfg.environment not in ("chain_walk", "lqr"):
        bad("pbo_variant", "closed form exists only for chain_walk and lqr")
    if cfg.algorithm in ("dqn", "prodqn") and cfg.environment != "bicycle":
        bad("algorithm", "online algorithms are configured for the bicycle environment")
    if cfg.eval_steps < cfg.bellman_iterations and cfg.algorithm in ("profqi", "prodqn"):
        bad("eval_steps", "must be >= bellman_iterations")


def _parse_value(name: str, text: str, kind):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text
        # tuple[int, ...]
        parts = text.replace(",", " ").split()
        return tuple(int(p) for p in parts)
    except ValueError as err:
        raise ConfigError(f"{_FIELD_SECTION[name]}.{name}", f"cannot parse {text!r}") from err


def parse_config(text: str) -> ExperimentConfig:
    """Parse an INI-style config; unknown keys are field-level errors."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError("file", str(err)) from err

    if not parser.has_section("experiment"):
        raise ConfigError("experiment", "missing [experiment] section")
    env = parser.get("experiment", "environment", fallback=None)
    alg = parser.get("experiment", "algorithm", fallback="profqi")
    if env is None:
        raise ConfigError("experiment.environment", "required")
    cfg = default_config(env, alg)

    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kind_of = {
        "environment": str, "algorithm": str, "pbo_variant": str, "loss": str,
        "family_kind": str,
    }
    updates = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(section, "unknown section")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{section}.{key}", "unknown field")
            if key in kind_of:
                kind = str
            elif types[key].startswith("tuple"):
                kind = tuple
            elif types[key] == "float":
                kind = float
            else:
                kind = int
            updates[key] = _parse_value(key, raw, kind)
    cfg = replace(cfg, **updates)
    validate_config(cfg)
    return cfg


def parse_config_file(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def render_config(cfg: ExperimentConfig) -> str:
    """Serialize with all defaults resolved; parse(render(c)) == c."""
    out = io.StringIO()
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for section, names in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for name in names:
            value = values[name]
            if isinstance(value, tuple):
                value = " ".join(str(v) for v in value)
            out.write(f"{name} = {value}\n")
        out.write("\n")
    return out.getvalue()


def apply_preset(cfg: ExperimentConfig, preset: str) -> ExperimentConfig:
    """'paper' keeps the table values; 'quick' scales the run down 10x for CI."""
    if preset == "paper":
        return cfg
    if preset != "quick":
        raise ConfigError("preset", f"unknown preset {preset!r}")

    def shrink(n, floor=1):
        return max(floor, n // 10)

    updates = dict(
        epochs=shrink(cfg.epochs),
        fit_steps=shrink(cfg.fit_steps),
        dataset_size=_shrink_dataset(cfg),
        buffer_capacity=shrink(cfg.buffer_capacity),
        initial_samples=shrink(cfg.initial_samples),
    )
    if cfg.algorithm in ("dqn", "prodqn"):
        # online runs also shrink the per-epoch step count; CI boxes cannot
        # absorb the full gradient-step budget inside a smoke run
        updates["steps_per_epoch"] = shrink(cfg.steps_per_epoch)
    if cfg.environment == "bicycle":
        updates["eval_horizon"] = 5000
    return replace(cfg, **updates)


def _shrink_dataset(cfg: ExperimentConfig) -> int:
    n = cfg.dataset_size
    if cfg.environment == "chain_walk":
        pairs = cfg.n_states * 2
        return max(pairs, (n // 10) // pairs * pairs)
    if cfg.environment == "lqr":
        mesh = max(2, int(round((n // 10) ** 0.5)))
        return mesh * mesh
    if cfg.environment == "car_on_hill":
        return max(11, (n // 10) // 11 * 11)
    return max(1, n // 10)


def method_label(cfg: ExperimentConfig) -> str:
    """Legend label for a run, distinguishing the operator variants."""
    if cfg.algorithm in ("fqi", "dqn"):
        return cfg.algorithm
    if cfg.pbo_variant == "closed_form":
        return "pbo"
    if cfg.pbo_variant == "structured_finite":
        return f"{cfg.algorithm}_chain"
    if cfg.pbo_variant == "structured_lqr":
        return f"{cfg.algorithm}_lqr"
    if cfg.loss == "eq4":
        return f"{cfg.algorithm}_inf"
    return cfg.algorithm
