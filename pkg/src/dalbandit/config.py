"""Experiment configuration read from flat ``section.key = value`` files.

Blank lines and ``#`` comments are ignored.  Sections: ``env``, ``policy``,
``dal`` and ``run``; unknown keys are errors.  Tuples are comma-separated.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "EnvSpec", "PolicySpec", "DalSpec", "RunSpec", "ExperimentConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    pass


VARIANTS = ("linear", "glm", "scb", "kernel", "contextual", "replay")
SCHEDULES = ("stationary", "ps", "drift", "random_walk")
POLICIES = ("linucb", "glmucb", "gpucb", "squarecb", "ucb", "ducb", "uniform", "oracle")
MODES = ("dal", "bare", "oracle_restart")
COVERS = ("auto", "linear_independent", "kernel_cover", "full_action_set")


@dataclass
class EnvSpec:
    variant: str = "linear"
    d: int = 10
    n_actions: int = 100
    S: float | None = None
    L: float = 1.0
    noise_var: float = 0.01
    schedule: str = "ps"
    xi: float = 0.6
    change_points: tuple[int, ...] | None = None
    n_changes: int | None = None
    change: str = "redraw"
    drift_delta: float = 0.01
    context_dim: int = 10
    n_contexts: int = 1000
    redraw_context_weights: bool = True
    kernel_centers: int = 200
    lengthscale: float = 0.2
    replay_path: str | None = None
    replay_noise: str = "gaussian"

    @property
    def norm_bound(self) -> float:
        if self.S is not None:
            return self.S
        return 3.0 if self.variant == "scb" else 1.0

    @property
    def bernoulli(self) -> bool:
        return self.variant in ("scb", "contextual") or (self.variant == "replay" and self.replay_noise == "bernoulli")


@dataclass
class PolicySpec:
    name: str = "linucb"
    reg: float = 1.0
    beta: float | None = None
    delta: float | None = None
    S: float | None = None
    noise_sd: float | None = None
    discount: float = 0.99
    ucb_xi: float = 2.0
    lr: float = 0.05
    squarecb_c: float = 1.0
    squarecb_model: str = "auto"
    gp_noise: float | None = None
    gp_cap: int = 2000


@dataclass
class DalSpec:
    mode: str = "dal"
    family: str = "auto"
    delta_F: float | None = None
    delta_D: float | None = None
    sigma2: float | None = None
    stride: int = 1
    max_history: int | None = None
    cover: str = "auto"
    tol: float = 1e-8
    p: float = 0.0
    q: float = 0.5
    C: float = 1.0
    gamma_T: float | None = None
    monitor_all: str = "auto"
    alpha_max: float = 1.0


@dataclass
class RunSpec:
    T: int = 10000
    n_trials: int = 15
    base_seed: int = 0
    parallelism: int = 1
    thin: int = 1


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    policy: PolicySpec = field(default_factory=PolicySpec)
    dal: DalSpec = field(default_factory=DalSpec)
    run: RunSpec = field(default_factory=RunSpec)

    def validate(self) -> ExperimentConfig:
        e, p, d, r = self.env, self.policy, self.dal, self.run
        _one_of("env.variant", e.variant, VARIANTS)
        _one_of("env.schedule", e.schedule, SCHEDULES)
        _one_of("env.change", e.change, ("redraw", "flip"))
        _one_of("env.replay_noise", e.replay_noise, ("gaussian", "bernoulli"))
        _one_of("policy.name", p.name, POLICIES)
        _one_of("policy.squarecb_model", p.squarecb_model, ("auto", "ridge", "logistic"))
        _one_of("dal.mode", d.mode, MODES)
        _one_of("dal.family", d.family, ("auto", "bernoulli", "gaussian"))
        _one_of("dal.cover", d.cover, COVERS)
        _one_of("dal.monitor_all", d.monitor_all, ("auto", "true", "false"))
        if r.T < 3:
            raise ConfigError(f"run.T must be at least 3, got {r.T}")
        if r.n_trials < 1 or r.parallelism < 1 or r.thin < 1:
            raise ConfigError("run.n_trials, run.parallelism and run.thin must be positive")
        if e.d < 1 or e.n_actions < 1:
            raise ConfigError("env.d and env.n_actions must be positive")
        if e.noise_var < 0:
            raise ConfigError("env.noise_var must be nonnegative")
        if e.variant == "replay" and not e.replay_path:
            raise ConfigError("env.variant = replay needs env.replay_path")
        if e.schedule == "random_walk" and e.variant not in ("linear", "glm", "scb"):
            raise ConfigError("random_walk drift applies to linear, glm and scb only")
        if e.change == "flip" and e.variant == "contextual":
            raise ConfigError("env.change = flip is not defined for contextual rewards")
        for name, val in (("dal.delta_F", d.delta_F), ("dal.delta_D", d.delta_D)):
            if val is not None and not 0 < val < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {val}")
        if not 0 < d.alpha_max <= 1:
            raise ConfigError("dal.alpha_max must lie in (0, 1]")
        return self


def _one_of(key: str, value: str, allowed: tuple[str, ...]) -> None:
    if value not in allowed:
        raise ConfigError(f"{key} must be one of {', '.join(allowed)}; got {value!r}")


_SECTIONS = {"env": EnvSpec, "policy": PolicySpec, "dal": DalSpec, "run": RunSpec}


def _coerce(key: str, raw: str, hint):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType) and type(None) in args:
        if raw.lower() in ("none", "null", ""):
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _coerce(key, raw, inner)
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if hint is float:
            return float(raw)
        if origin is tuple:
            return tuple(int(x) for x in raw.replace(";", ",").split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {getattr(hint, '__name__', hint)}") from None
    return raw


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    values.update(overrides or {})
    cfg = ExperimentConfig()
    for key, val in values.items():
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or name not in {f.name for f in dataclasses.fields(cls)}:
            raise ConfigError(f"unknown config key {key!r}")
        hint = typing.get_type_hints(cls)[name]
        setattr(getattr(cfg, section), name, _coerce(key, val, hint))
    return cfg.validate()


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    return parse_config(text, overrides)
