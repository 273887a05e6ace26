"""Experiment configuration: a strict, JSON-round-trippable schema.

Unknown keys are rejected with the offending path named, so config drift
fails loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from zipfgrid.errors import ConfigError

AGENT_KINDS = ("q_per", "q_uniform", "ac", "ac_ssl")

# the paper-scale evaluation window, printed next to the configured one
PAPER_WINDOW = (2_000_000, 3_000_000)


@dataclass
class EnvSection:
    world_seed: int = 2022
    num_maps: int = 20
    num_objects: int = 20
    goal_exponent: float = 2.0
    rare_fraction: float = 0.2


@dataclass
class NetSection:
    encoder: list = field(default_factory=lambda: [[16, 3, 2], [32, 3, 2], [32, 3, 2]])
    trunk: list = field(default_factory=lambda: [256])


@dataclass
class QSection:
    discount: float = 0.9
    lam: float = 0.3
    epsilon: float = 0.1
    target_update_interval: int = 10
    rescale_eps: float = 1e-3
    batch_size: int = 32
    warmup_episodes: int = 100
    buffer_episodes: int = 1000
    priority_mix: float = 0.9
    priority_exponent: float = 1.0
    is_exponent: float = 0.6
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    adam_epsilon: float = 1.25e-6
    max_grad_norm: float | None = 0.5


@dataclass
class ACSection:
    discount: float = 0.99
    baseline_scale: float = 0.59
    entropy_cost: float = 9.4e-5
    # optional linear anneal of the entropy cost over the whole run; None
    # keeps the constant cost above
    entropy_cost_final: float | None = None
    unroll_length: int = 128
    learning_rate: float = 3e-4
    adam_epsilon: float = 1e-8
    max_grad_norm: float | None = None


@dataclass
class SSLSection:
    weight: float = 1.0


@dataclass
class EvalSection:
    cadence: int = 1000
    episodes: int = 1000
    window: list = field(default_factory=lambda: [20_000, 30_000])


@dataclass
class ExperimentConfig:
    level_name: str = "zipf_2"
    agent: str = "q_per"
    seed: int = 1
    total_updates: int = 30_000
    threads: int = 1
    out_dir: str = "runs/default"
    env: EnvSection = field(default_factory=EnvSection)
    net: NetSection = field(default_factory=NetSection)
    q: QSection = field(default_factory=QSection)
    ac: ACSection = field(default_factory=ACSection)
    ssl: SSLSection = field(default_factory=SSLSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "ExperimentConfig":
        if self.agent not in AGENT_KINDS:
            raise ConfigError(f"agent must be one of {AGENT_KINDS}, got {self.agent!r}")
        if not (self.level_name in ("uniform", "rare") or self.level_name.startswith("zipf_")):
            raise ConfigError(f"level_name: unknown level {self.level_name!r}")
        if self.total_updates < 1:
            raise ConfigError("total_updates must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if len(self.eval.window) != 2 or self.eval.window[0] > self.eval.window[1]:
            raise ConfigError(f"eval.window must be [lo, hi], got {self.eval.window}")
        if self.env.num_maps < 1 or self.env.num_objects < 1:
            raise ConfigError("env.num_maps and env.num_objects must be >= 1")
        return self

    @property
    def condition(self) -> str:
        """Grouping key for aggregation across seeds."""
        return f"{self.agent}@{self.level_name}"


_SECTIONS = {
    "env": EnvSection,
    "net": NetSection,
    "q": QSection,
    "ac": ACSection,
    "ssl": SSLSection,
    "eval": EvalSection,
}


def _build(cls, data: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}{key}")
        if key in _SECTIONS and path == "":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key} must be an object")
            kwargs[key] = _build(_SECTIONS[key], value, f"{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return _build(ExperimentConfig, data, "").validate()


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(
        json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
