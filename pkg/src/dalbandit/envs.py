"""Non-stationary bandit environments.

Synthetic environments pair a finite action set with a reward model (linear,
logistic, logistic with Bernoulli rewards, RKHS function, or contextual) and a
schedule that moves the model over time: abrupt change-points, linear
interpolation between two models, or a norm-capped random walk.  Replay
environments read external data from CSV.

Randomness is drawn in a fixed pattern per round (one noise draw, one context
draw), so the reward stream does not depend on which arm a learner plays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np

from .policies import se_kernel, sigmoid

__all__ = [
    "ParametricModel",
    "KernelModel",
    "ContextualModel",
    "NoiseSpec",
    "PsSchedule",
    "LinearDrift",
    "RandomWalk",
    "ContextPool",
    "Round",
    "SyntheticEnv",
    "MatrixReplayEnv",
    "LoggedReplay",
    "ReplayFormatError",
    "sample_geometric_changepoints",
    "evenly_spaced_changepoints",
    "make_action_set",
    "make_parametric_model",
    "make_kernel_model",
    "make_contextual_model",
    "make_context_pool",
    "contextual_mean",
    "env_step",
    "oracle_best",
    "load_replay",
    "write_replay_matrix",
    "write_logged_replay",
]


# -- reward models ----------------------------------------------------------


@dataclass(frozen=True)
class ParametricModel:
    """Mean reward link(<theta, a>); ``variant`` is linear, glm or scb."""

    theta: np.ndarray
    variant: Literal["linear", "glm", "scb"] = "linear"

    @property
    def link(self) -> str:
        return "identity" if self.variant == "linear" else "sigmoid"

    def mean(self, actions: np.ndarray, context=None) -> np.ndarray:
        z = np.asarray(actions, dtype=float) @ self.theta
        return z if self.variant == "linear" else sigmoid(z)

    def flipped(self) -> ParametricModel:
        return replace(self, theta=-self.theta)

    def interpolate(self, other: ParametricModel, w: float) -> ParametricModel:
        return replace(self, theta=(1.0 - w) * self.theta + w * other.theta)


@dataclass(frozen=True)
class KernelModel:
    """f(x) = sum_i weights_i k(x, centers_i) with an SE kernel."""

    weights: np.ndarray
    centers: np.ndarray
    lengthscale: float = 0.2
    variant: str = "kernel"

    def mean(self, actions: np.ndarray, context=None) -> np.ndarray:
        return se_kernel(actions, self.centers, self.lengthscale) @ self.weights

    def flipped(self) -> KernelModel:
        return replace(self, weights=-self.weights)

    def interpolate(self, other: KernelModel, w: float) -> KernelModel:
        # (1-w) f + w f' is again a finite kernel expansion
        return replace(
            self,
            weights=np.concatenate([(1.0 - w) * self.weights, w * other.weights]),
            centers=np.vstack([self.centers, other.centers]),
        )


@dataclass(frozen=True)
class ContextualModel:
    """Per-arm parameters of clip(b + z_sig s(u.c) + z_sin sin(v.c) + z_xpr c_2 c_3, 0, 1)."""

    u: np.ndarray
    v: np.ndarray
    b: np.ndarray
    z: np.ndarray
    variant: str = "contextual"

    @property
    def n_actions(self) -> int:
        return len(self.b)

    def mean(self, actions=None, context=None) -> np.ndarray:
        c = np.asarray(context, dtype=float)
        if c.shape != (self.u.shape[1],):
            raise ValueError(f"context must have {self.u.shape[1]} entries, got shape {c.shape}")
        raw = self.b + self.z[0] * sigmoid(self.u @ c) + self.z[1] * np.sin(self.v @ c) + self.z[2] * c[1] * c[2]
        return np.clip(raw, 0.0, 1.0)

    def flipped(self) -> ContextualModel:
        raise ValueError("sign-flip changes are not defined for contextual rewards")

    def interpolate(self, other: ContextualModel, w: float) -> ContextualModel:
        mix = lambda x, y: (1.0 - w) * x + w * y  # noqa: E731
        return replace(self, u=mix(self.u, other.u), v=mix(self.v, other.v), b=mix(self.b, other.b), z=mix(self.z, other.z))


def contextual_mean(model: ContextualModel, context: np.ndarray, action: int) -> float:
    return float(model.mean(None, context)[action])


def make_parametric_model(rng: np.random.Generator, d: int, S: float, variant: str = "linear") -> ParametricModel:
    """Coordinates uniform in [-1, 1], then rescaled to norm exactly ``S``."""
    if d < 1 or S <= 0:
        raise ValueError("need d >= 1 and S > 0")
    while True:
        theta = rng.uniform(-1.0, 1.0, size=d)
        norm = np.linalg.norm(theta)
        if norm > 0:
            return ParametricModel(theta * (S / norm), variant)


def _uniform_ball(rng: np.random.Generator, n: int, d: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.random(n) ** (1.0 / d))[:, None]


def make_kernel_model(
    rng: np.random.Generator, d: int, radius: float, M: int = 200, lengthscale: float = 0.2
) -> KernelModel:
    """``M`` centers uniform in the action ball, weights uniform in [-1, 1]."""
    centers = _uniform_ball(rng, M, d, radius)
    weights = rng.uniform(-1.0, 1.0, size=M)
    return KernelModel(weights, centers, lengthscale)


def make_contextual_model(rng: np.random.Generator, n_actions: int, context_dim: int = 10) -> ContextualModel:
    u = rng.standard_normal((n_actions, context_dim))
    v = rng.standard_normal((n_actions, context_dim))
    b = rng.uniform(0.3, 0.7, size=n_actions)
    z = np.array([rng.uniform(0.25, 0.45), rng.uniform(0.15, 0.35), rng.uniform(0.10, 0.25)])
    return ContextualModel(u, v, b, z)


@dataclass
class ContextPool:
    vectors: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        self._cdf = np.cumsum(self.weights)

    def redraw_weights(self, rng: np.random.Generator) -> None:
        self.weights = rng.dirichlet(np.ones(len(self.vectors)))
        self._cdf = np.cumsum(self.weights)

    def sample(self, rng: np.random.Generator) -> int:
        return int(min(np.searchsorted(self._cdf, rng.random(), side="right"), len(self.vectors) - 1))


def make_context_pool(rng: np.random.Generator, n: int = 1000, context_dim: int = 10) -> ContextPool:
    vecs = rng.standard_normal((n, context_dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return ContextPool(vecs, rng.dirichlet(np.ones(n)))


def make_action_set(rng: np.random.Generator, n_actions: int, d: int, radius: float = 1.0) -> np.ndarray:
    """Gaussian actions scaled together so the longest has norm ``radius``."""
    A = rng.standard_normal((n_actions, d))
    return A * (radius / np.linalg.norm(A, axis=1).max())


# -- schedules --------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    kind: Literal["gaussian", "bernoulli_of_mean"] = "gaussian"
    sigma2: float = 0.01

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "bernoulli_of_mean"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma2 < 0:
            raise ValueError("noise variance must be nonnegative")


@dataclass(frozen=True)
class PsSchedule:
    """Abrupt changes at ``change_points``; ``change`` redraws the model or negates it."""

    change_points: tuple[int, ...]
    change: Literal["redraw", "flip"] = "redraw"

    def __post_init__(self) -> None:
        cps = tuple(int(c) for c in self.change_points)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("change points must be strictly increasing")
        if cps and cps[0] <= 1:
            raise ValueError("change points must be greater than 1")
        object.__setattr__(self, "change_points", cps)

    @property
    def n_changes(self) -> int:
        return len(self.change_points)


@dataclass(frozen=True)
class LinearDrift:
    """Interpolate from the initial model to a fresh ``final`` model over the horizon."""


@dataclass(frozen=True)
class RandomWalk:
    delta: float
    S: float = 1.0


def sample_geometric_changepoints(T: int, xi: float, rng: np.random.Generator) -> PsSchedule:
    """Change-points with i.i.d. Geometric(T^-xi) gaps starting from t = 1."""
    if T < 2:
        raise ValueError("horizon must be at least 2")
    rho = T ** (-xi)
    points: list[np.ndarray] = []
    last = 1
    chunk = int(T * rho * 1.5) + 16
    while last <= T:
        steps = last + np.cumsum(rng.geometric(rho, size=chunk))
        points.append(steps)
        last = int(steps[-1])
    cps = np.concatenate(points)
    return PsSchedule(tuple(int(c) for c in cps[cps <= T]))


def evenly_spaced_changepoints(T: int, n: int, change: str = "redraw") -> PsSchedule:
    return PsSchedule(tuple(j * T // (n + 1) + 1 for j in range(1, n + 1)), change)


# -- environments -----------------------------------------------------------


@dataclass
class Round:
    t: int
    context_id: int
    features: np.ndarray
    means: np.ndarray
    context: np.ndarray | None = None

    @property
    def best(self) -> tuple[int, float]:
        i = int(np.argmax(self.means))
        return i, float(self.means[i])


class SyntheticEnv:
    """Synthetic environment over a finite action set.

    ``redraw(rng)`` returns a fresh reward model; it is called at redraw
    change-points and once at construction for linear drift's end point.
    """

    def __init__(
        self,
        actions: np.ndarray,
        model,
        noise: NoiseSpec,
        T: int,
        rng: np.random.Generator,
        schedule: PsSchedule | LinearDrift | RandomWalk | None = None,
        redraw=None,
        pool: ContextPool | None = None,
        redraw_context_weights: bool = True,
    ) -> None:
        self.actions = np.asarray(actions, dtype=float)
        self.noise = noise
        self.T = T
        self.rng = rng
        self.schedule = schedule
        self.redraw = redraw
        self.pool = pool
        self.redraw_context_weights = redraw_context_weights
        self.model_init = model
        self.model = model
        self.model_final = None
        if isinstance(schedule, LinearDrift):
            if redraw is None:
                raise ValueError("linear drift needs a model generator for its end point")
            self.model_final = redraw(rng)
        if isinstance(schedule, RandomWalk) and not isinstance(model, ParametricModel):
            raise ValueError("random-walk drift applies to parametric models only")
        if noise.kind == "bernoulli_of_mean" and model.variant not in ("scb", "contextual"):
            raise ValueError("Bernoulli rewards need means in [0, 1]")
        self._changes = set(schedule.change_points) if isinstance(schedule, PsSchedule) else set()
        self.t = 0
        self.current: Round | None = None
        self._draw = 0.0

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_contexts(self) -> int:
        return 1 if self.pool is None else len(self.pool.vectors)

    @property
    def change_points(self) -> tuple[int, ...]:
        return self.schedule.change_points if isinstance(self.schedule, PsSchedule) else ()

    def model_at(self, t: int):
        """Linear-drift model at step ``t`` (weight t/T on the final model)."""
        return self.model_init.interpolate(self.model_final, t / self.T)

    def _advance(self, t: int) -> None:
        sched = self.schedule
        if isinstance(sched, PsSchedule):
            if t in self._changes:
                if sched.change == "flip":
                    self.model = self.model.flipped()
                else:
                    self.model = self.redraw(self.rng)
                    if self.pool is not None and self.redraw_context_weights:
                        self.pool.redraw_weights(self.rng)
        elif isinstance(sched, LinearDrift):
            self.model = self.model_at(t)
        elif isinstance(sched, RandomWalk) and t > 1:
            theta = self.model.theta
            while True:
                cand = theta + _uniform_ball(self.rng, 1, len(theta), sched.delta)[0]
                if np.linalg.norm(cand) <= sched.S * (1.0 + 1e-12):
                    break
            self.model = replace(self.model, theta=cand)

    def observe(self, t: int) -> Round:
        """Advance to round ``t`` (must be the next round) and reveal its context."""
        if t != self.t + 1:
            raise ValueError(f"rounds must be stepped in order: expected {self.t + 1}, got {t}")
        if t > self.T:
            raise ValueError(f"round {t} is past the horizon {self.T}")
        self.t = t
        self._advance(t)
        if self.pool is None:
            cid, cvec, features = 0, None, self.actions
        else:
            cid = self.pool.sample(self.rng)
            cvec = self.pool.vectors[cid]
            features = np.broadcast_to(cvec, (self.n_actions, len(cvec)))
        means = self.model.mean(self.actions, cvec)
        self._draw = self.rng.standard_normal() if self.noise.kind == "gaussian" else self.rng.random()
        self.current = Round(t, cid, features, means, cvec)
        return self.current

    def reward(self, index: int) -> float:
        mean = float(self.current.means[index])
        if self.noise.kind == "gaussian":
            return mean + math.sqrt(self.noise.sigma2) * self._draw
        return float(self._draw < mean)


class MatrixReplayEnv:
    """K arms whose mean rewards per round come from a K x T matrix."""

    def __init__(self, means: np.ndarray, noise: NoiseSpec | None, rng: np.random.Generator) -> None:
        self.matrix = np.asarray(means, dtype=float)
        self.noise = noise or NoiseSpec("gaussian", 0.0)
        if self.noise.kind == "bernoulli_of_mean" and (self.matrix.min() < 0 or self.matrix.max() > 1):
            raise ValueError("Bernoulli replay needs means in [0, 1]")
        self.rng = rng
        self.actions = np.eye(self.matrix.shape[0])
        self.t = 0
        self.current: Round | None = None
        self._draw = 0.0

    @property
    def T(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_actions(self) -> int:
        return self.matrix.shape[0]

    n_contexts = 1
    change_points: tuple[int, ...] = ()

    def observe(self, t: int) -> Round:
        if t != self.t + 1 or t > self.T:
            raise ValueError(f"rounds must be stepped in order within the horizon: got {t} after {self.t}")
        self.t = t
        means = self.matrix[:, t - 1]
        self._draw = self.rng.standard_normal() if self.noise.kind == "gaussian" else self.rng.random()
        self.current = Round(t, 0, self.actions, means)
        return self.current

    def reward(self, index: int) -> float:
        mean = float(self.current.means[index])
        if self.noise.kind == "gaussian":
            return mean + math.sqrt(self.noise.sigma2) * self._draw if self.noise.sigma2 > 0 else mean
        return float(self._draw < mean)


@dataclass
class LoggedReplay:
    """Logged rounds: candidate arm ids, the displayed id and its binary outcome.

    A learner's proposal earns the logged reward only when it equals the
    displayed arm; other rounds are discarded from its history.
    """

    t: np.ndarray
    candidates: list[np.ndarray]
    displayed: np.ndarray
    reward: np.ndarray
    arms: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        ids = set(self.displayed.tolist())
        for c in self.candidates:
            ids.update(c.tolist())
        self.arms = np.array(sorted(ids), dtype=int)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n_actions(self) -> int:
        return len(self.arms)

    def positions(self, ids: np.ndarray) -> np.ndarray:
        """Map arm ids to rows of the one-hot feature matrix."""
        return np.searchsorted(self.arms, ids)


def env_step(env, t: int, index: int) -> float:
    """Advance ``env`` to round ``t`` and return the reward of playing ``index``."""
    env.observe(t)
    return env.reward(index)


def oracle_best(env, t: int | None = None, context=None) -> tuple[int, float]:
    """Best arm and its mean for the environment's current round (lowest index on ties)."""
    rnd = env.current
    if rnd is None or (t is not None and rnd.t != t):
        raise ValueError("oracle_best needs the environment to be at the requested round")
    return rnd.best


# -- replay files -----------------------------------------------------------


class ReplayFormatError(ValueError):
    def __init__(self, kind: str, message: str) -> None:
        super().__init__(f"{kind}: {message}")
        self.kind = kind


LOGGED_HEADER = ["t", "candidates", "displayed", "reward"]


def load_replay(path: str | Path, noise: NoiseSpec | None = None, rng: np.random.Generator | None = None):
    """Read a replay file.

    Matrix files start with ``K,T`` followed by K rows of T means and yield a
    :class:`MatrixReplayEnv`; logged files start with the header
    ``t,candidates,displayed,reward`` and yield a :class:`LoggedReplay`.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ReplayFormatError("malformed", f"{path} is empty")
    if [c.strip() for c in rows[0]] == LOGGED_HEADER:
        return _parse_logged(path, rows[1:])
    return MatrixReplayEnv(_parse_matrix(path, rows), noise, rng or np.random.default_rng(0))


def _parse_matrix(path: Path, rows: list[list[str]]) -> np.ndarray:
    try:
        K, T = (int(x) for x in rows[0])
    except ValueError:
        raise ReplayFormatError("malformed", f"{path}: first line must be 'K,T', got {','.join(rows[0])!r}") from None
    body = [r for r in rows[1:] if r]
    if len(body) != K:
        raise ReplayFormatError("dimension mismatch", f"{path}: header declares {K} arms but {len(body)} rows follow")
    out = np.empty((K, T))
    for i, r in enumerate(body):
        if len(r) != T:
            raise ReplayFormatError("dimension mismatch", f"{path}: row {i + 2} has {len(r)} values, expected {T}")
        try:
            out[i] = [float(x) for x in r]
        except ValueError:
            raise ReplayFormatError("malformed", f"{path}: row {i + 2} contains a non-numeric value") from None
    return out


def _parse_logged(path: Path, rows: list[list[str]]) -> LoggedReplay:
    ts, cands, shown, rewards = [], [], [], []
    prev = None
    for lineno, r in enumerate(rows, start=2):
        if not r:
            continue
        if len(r) != 4:
            raise ReplayFormatError("malformed", f"{path}: line {lineno} has {len(r)} fields, expected 4")
        try:
            t = int(r[0])
            c = np.array([int(x) for x in r[1].split(";")], dtype=int)
            j = int(r[2])
            x = float(r[3])
        except ValueError:
            raise ReplayFormatError("malformed", f"{path}: line {lineno} cannot be parsed") from None
        if x not in (0.0, 1.0):
            raise ReplayFormatError("malformed", f"{path}: line {lineno} reward must be 0 or 1")
        if j not in c:
            raise ReplayFormatError("dimension mismatch", f"{path}: line {lineno} displayed id {j} is not a candidate")
        if prev is not None and t <= prev:
            raise ReplayFormatError("non-monotone timestamps", f"{path}: line {lineno} has t={t} after t={prev}")
        prev = t
        ts.append(t)
        cands.append(c)
        shown.append(j)
        rewards.append(x)
    if not ts:
        raise ReplayFormatError("malformed", f"{path} has no logged rounds")
    return LoggedReplay(np.array(ts), cands, np.array(shown), np.array(rewards))


def write_replay_matrix(path: str | Path, means: np.ndarray) -> None:
    means = np.asarray(means, dtype=float)
    K, T = means.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{K},{T}\n")
        for row in means:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def write_logged_replay(path: str | Path, log: LoggedReplay) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(LOGGED_HEADER) + "\n")
        for t, c, j, x in zip(log.t, log.candidates, log.displayed, log.reward):
            fh.write(f"{int(t)},{';'.join(str(int(i)) for i in c)},{int(j)},{int(x)}\n")
