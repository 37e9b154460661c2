"""Run configuration: all training hyperparameters plus artifact-level
decisions, serialized as flat ``key=value`` text with every run."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

WEIGHTING_KINDS = ("exp_indicator", "linear_indicator")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WeightingConfig:
    kind: str = "exp_indicator"
    mean_normalize: bool = False

    def __post_init__(self):
        if self.kind not in WEIGHTING_KINDS:
            raise ConfigError(f"weighting kind must be one of {WEIGHTING_KINDS}")


@dataclass(frozen=True)
class RunConfig:
    # training-scale defaults from the hyperparameter table
    gamma: float = 0.99
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    expectile_tau: float = 0.9
    lagrange_lambda: float = 0.1
    flow_steps: int = 1
    gradient_steps_per_env_step: int = 1
    # artifact-level decisions
    warmup_transitions: int = 5000
    polyak_rate: float = 0.005
    seed: int = 0
    total_env_steps: int = 100_000
    eval_interval: int = 1000
    eval_episodes: int = 5
    value_hidden_dim: int = 64
    value_hidden_layers: int = 2
    policy_hidden_dim: int = 64
    policy_hidden_layers: int = 2
    twin_min: bool = True
    weighting_kind: str = "exp_indicator"
    weighting_mean_normalize: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0,1), got {self.gamma}")
        if self.lagrange_lambda < 0:
            raise ConfigError("lagrange_lambda must be >= 0")
        for name in ("actor_lr", "critic_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.expectile_tau < 1.0:
            raise ConfigError("expectile_tau must lie in (0,1)")
        if not 0.0 < self.polyak_rate <= 1.0:
            raise ConfigError("polyak_rate must lie in (0,1]")
        for name in ("batch_size", "buffer_capacity", "flow_steps",
                     "gradient_steps_per_env_step", "eval_interval", "eval_episodes",
                     "value_hidden_dim", "value_hidden_layers",
                     "policy_hidden_dim", "policy_hidden_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.warmup_transitions < 0 or self.total_env_steps < 0:
            raise ConfigError("warmup_transitions and total_env_steps must be >= 0")
        if self.weighting_kind not in WEIGHTING_KINDS:
            raise ConfigError(f"weighting_kind must be one of {WEIGHTING_KINDS}")

    def weighting(self) -> WeightingConfig:
        return WeightingConfig(kind=self.weighting_kind,
                               mean_normalize=self.weighting_mean_normalize)

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


def _parse_value(raw: str, typ):
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if typ is int:
        # accept scientific notation for integer-valued keys (1e6)
        v = float(raw)
        if v != int(v):
            raise ConfigError(f"expected an integer, got {raw!r}")
        return int(v)
    if typ is float:
        return float(raw)
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key=value`` lines; unset keys keep their defaults.

    Blank lines and ``#`` comments are ignored. Unknown keys raise a
    ConfigError naming the valid keys.
    """
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    types = {"float": float, "int": int, "str": str, "bool": bool}
    overrides = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"line {ln}: unknown key {key!r}; valid keys: {sorted(fields)}")
        typ = types.get(str(fields[key]), fields[key])
        overrides[key] = _parse_value(raw, typ)
    return (base or RunConfig()).replace(**overrides)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as f:
        return parse_config_text(f.read(), base)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"
