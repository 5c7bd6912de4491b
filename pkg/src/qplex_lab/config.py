"""Experiment configuration: defaults, named presets and flat ``key=value`` parsing."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .envs import PAYOFFS
from .errors import UsageError
from .mixers import ALGOS

REGIMES = ("online", "offline")
EPSILON_MODES = ("linear", "one")
DATASET_MODES = ("uniform", "exhaustive")


@dataclass
class ExperimentConfig:
    env: str = "matrix/harder"
    algo: str = "qplex"
    seed: int = 0
    regime: str = "offline"
    # online budget in env steps, offline budget in iterations (200 training episodes each)
    total_env_steps: int = 200_000
    total_iterations: int = 50
    updates_per_episode: int = 2
    batch_size: int = 32
    target_update_episodes: int = 200
    lr: float = 5e-4
    gamma: float = 0.99
    lambda_layers: int = 3
    lambda_heads: int = 10
    mixer_hidden: int = 64
    agent_hidden: int = 64
    recurrent: bool = False
    time_feature: bool = False
    epsilon: str = "linear"
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    anneal_steps: int = 50_000
    buffer_capacity: int = 5000
    dataset: str = ""  # path; empty means "generate one from the fields below"
    dataset_mode: str = "uniform"
    dataset_episodes: int = 900
    dataset_seed: int = -1  # -1: reuse ``seed``
    eval_every: int = 1  # iterations (offline) or env steps (online)
    eval_episodes: int = 32
    stop_at_return: float = float("nan")  # nan disables early stopping
    out: str = ""

    def validate(self) -> "ExperimentConfig":
        name, _, variant = self.env.partition("/")
        if name == "matrix":
            if variant not in PAYOFFS:
                raise UsageError(f"env: unknown matrix variant {variant!r}")
        elif self.env != "mmdp":
            raise UsageError(f"env: unknown environment {self.env!r}")
        _choice("algo", self.algo, ALGOS)
        _choice("regime", self.regime, REGIMES)
        _choice("epsilon", self.epsilon, EPSILON_MODES)
        _choice("dataset_mode", self.dataset_mode, DATASET_MODES)
        for key in ("total_env_steps", "total_iterations", "updates_per_episode", "batch_size",
                    "target_update_episodes", "lambda_layers", "lambda_heads", "mixer_hidden", "agent_hidden",
                    "buffer_capacity", "dataset_episodes", "eval_every", "eval_episodes"):
            if getattr(self, key) <= 0:
                raise UsageError(f"{key}: must be positive, got {getattr(self, key)}")
        if not self.lr > 0:
            raise UsageError(f"lr: must be positive, got {self.lr}")
        if not 0 <= self.gamma < 1:
            raise UsageError(f"gamma: must lie in [0, 1), got {self.gamma}")
        if self.anneal_steps < 0:
            raise UsageError("anneal_steps: must be non-negative")
        return self

    def as_lines(self) -> list[str]:
        return [f"{f.name}={_render(getattr(self, f.name))}" for f in fields(self)]


def _choice(key, value, options):
    if value not in options:
        raise UsageError(f"{key}: unknown value {value!r}; choose from {', '.join(options)}")


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_TYPES = {f.name: type(f.default) for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw.replace("_", ""))
        if kind is float:
            return float(raw)
    except ValueError:
        raise UsageError(f"{key}: malformed value {raw!r} (expected {kind.__name__})") from None
    return raw


def _matrix(variant: str, algo: str, **kw) -> dict:
    return dict(env=f"matrix/{variant}", algo=algo, regime="offline", dataset_mode="uniform", total_iterations=50,
                **kw)


PRESETS: dict[str, dict] = {
    # offline matrix games on a uniform fixed dataset
    "harder-matrix-qplex": _matrix("harder", "qplex", lambda_layers=3, lambda_heads=10),
    "harder-matrix-vdn": _matrix("harder", "vdn"),
    "harder-matrix-qmix": _matrix("harder", "qmix"),
    "harder-matrix-qatten": _matrix("harder", "qatten-ablation"),
    "original-matrix-qplex": _matrix("original", "qplex", lambda_layers=3, lambda_heads=10),
    # online epsilon-greedy on the harder game
    "harder-matrix-qplex-online": dict(env="matrix/harder", algo="qplex", regime="online", epsilon="linear",
                                       total_env_steps=200_000, eval_every=2_000, lambda_layers=3,
                                       lambda_heads=10),
    # two-state MMDP stability under pure exploration
    "mmdp-qplex": dict(env="mmdp", algo="qplex", regime="online", epsilon="one", total_env_steps=2_000_000,
                       eval_every=20_000, eval_episodes=1, lambda_layers=2, lambda_heads=4),
    "mmdp-vdn": dict(env="mmdp", algo="vdn", regime="online", epsilon="one", total_env_steps=2_000_000,
                     eval_every=20_000, eval_episodes=1),
}


def preset(name: str) -> dict:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise UsageError(f"preset: unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def parse_pairs(pairs: list[tuple[str, str]], base: dict | None = None) -> ExperimentConfig:
    """Apply ``(key, raw value)`` pairs in order; a ``preset`` key expands in place."""
    values = dict(base or {})
    for key, raw in pairs:
        key = key.strip().replace("-", "_")
        if key == "preset":
            values.update(preset(raw.strip()))
            continue
        if key not in _FIELDS:
            raise UsageError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return ExperimentConfig(**values).validate()


def parse_text(text: str) -> list[tuple[str, str]]:
    """Parse flat ``key=value`` text; blank lines and ``#`` comments are ignored."""
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def parse_config(text: str = "", overrides: list[tuple[str, str]] | None = None) -> ExperimentConfig:
    """Config file text first, then overrides (later values win)."""
    return parse_pairs(parse_text(text) + list(overrides or []))


def replace(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return dataclasses.replace(cfg, **kw).validate()
