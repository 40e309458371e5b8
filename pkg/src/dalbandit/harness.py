"""Seeded multi-trial experiment runner, regret accounting and CSV output."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .covering import (
    CoveringConfig,
    CoveringSet,
    build_cover_kernel,
    build_cover_linear,
    full_cover,
    normalize_to_box,
)
from .dal import DAL
from .detect import GlrConfig, GlrFamily
from .envs import (
    LinearDrift,
    LoggedReplay,
    NoiseSpec,
    PsSchedule,
    RandomWalk,
    SyntheticEnv,
    evenly_spaced_changepoints,
    load_replay,
    make_action_set,
    make_context_pool,
    make_contextual_model,
    make_kernel_model,
    make_parametric_model,
    sample_geometric_changepoints,
)
from .policies import GLMUCB, GPUCB, DiscountedUCB, LinUCB, Policy, SquareCB, UniformRandom

__all__ = [
    "TrialError",
    "TrialResult",
    "AggregateResult",
    "OraclePolicy",
    "trial_streams",
    "build_env",
    "build_policy",
    "build_cover",
    "build_learner",
    "run_trial",
    "run_experiment",
    "aggregate",
    "emit_csv",
    "read_csv",
]


class TrialError(RuntimeError):
    def __init__(self, seed: int, message: str) -> None:
        super().__init__(f"trial with seed {seed} failed: {message}")
        self.seed = seed


@dataclass
class TrialResult:
    """Per-round regret (from true means) and observed reward of one trial."""

    seed: int
    instant_regret: np.ndarray
    reward: np.ndarray
    restarts: list[int] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.instant_regret)

    @property
    def cumulative_reward(self) -> np.ndarray:
        return np.cumsum(self.reward)

    def __len__(self) -> int:
        return len(self.instant_regret)


@dataclass
class AggregateResult:
    t: np.ndarray
    mean_regret: np.ndarray
    stderr_regret: np.ndarray
    mean_reward: np.ndarray
    final_regrets: np.ndarray
    restart_counts: list[int]
    wall_times: list[float]

    @property
    def n_trials(self) -> int:
        return len(self.final_regrets)


class OraclePolicy(Policy):
    """Plays the best arm of the environment's current round."""

    name = "oracle"

    def __init__(self, env) -> None:
        self.env = env

    def reset(self) -> None:
        pass

    def select(self, context, actions, rng=None, ids=None) -> int:
        return self.env.current.best[0]

    def update(self, context, actions, index, reward, ids=None) -> None:
        pass


def trial_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (environment, policy) generators for one trial."""
    env_ss, pol_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.Philox(env_ss)), np.random.Generator(np.random.Philox(pol_ss))


# -- construction -----------------------------------------------------------


def _schedule(cfg: ExperimentConfig, rng: np.random.Generator):
    e, T = cfg.env, cfg.run.T
    if e.schedule == "stationary":
        return None
    if e.schedule == "drift":
        return LinearDrift()
    if e.schedule == "random_walk":
        return RandomWalk(e.drift_delta, e.norm_bound)
    if e.change_points is not None:
        return PsSchedule(tuple(e.change_points), e.change)
    if e.n_changes is not None:
        return evenly_spaced_changepoints(T, e.n_changes, e.change)
    sched = sample_geometric_changepoints(T, e.xi, rng)
    return PsSchedule(sched.change_points, e.change)


def build_env(cfg: ExperimentConfig, rng: np.random.Generator):
    """Environment for ``cfg``; replay variants ignore ``run.T``."""
    e, T = cfg.env, cfg.run.T
    if e.variant == "replay":
        noise = NoiseSpec("bernoulli_of_mean" if e.replay_noise == "bernoulli" else "gaussian", e.noise_var)
        return load_replay(e.replay_path, noise, rng)
    pool = None
    if e.variant in ("linear", "glm", "scb"):
        actions = make_action_set(rng, e.n_actions, e.d, e.L)
        S = e.norm_bound

        def redraw(r):
            return make_parametric_model(r, e.d, S, e.variant)

    elif e.variant == "kernel":
        radius = math.sqrt(e.d)
        actions = make_action_set(rng, e.n_actions, e.d, radius)

        def redraw(r):
            return make_kernel_model(r, e.d, radius, e.kernel_centers, e.lengthscale)

    else:
        pool = make_context_pool(rng, e.n_contexts, e.context_dim)
        actions = np.eye(e.n_actions)

        def redraw(r):
            return make_contextual_model(r, e.n_actions, e.context_dim)

    model = redraw(rng)
    schedule = _schedule(cfg, rng)
    noise = NoiseSpec("bernoulli_of_mean", 0.0) if e.bernoulli else NoiseSpec("gaussian", e.noise_var)
    return SyntheticEnv(actions, model, noise, T, rng, schedule, redraw, pool, e.redraw_context_weights)


def _feature_dim(cfg: ExperimentConfig, env) -> int:
    if isinstance(env, LoggedReplay):
        return env.n_actions
    if cfg.env.variant == "contextual":
        return cfg.env.context_dim
    return env.actions.shape[1]


def _noise_var(cfg: ExperimentConfig) -> float:
    return 0.25 if cfg.env.bernoulli else cfg.env.noise_var


def build_policy(cfg: ExperimentConfig, env, T: int) -> Policy:
    p, e = cfg.policy, cfg.env
    K = env.n_actions
    dim = _feature_dim(cfg, env)
    delta = p.delta if p.delta is not None else 1.0 / T
    S = p.S if p.S is not None else e.norm_bound
    noise_sd = p.noise_sd if p.noise_sd is not None else math.sqrt(max(_noise_var(cfg), 1e-12))
    if p.name == "linucb":
        return LinUCB(dim, p.reg, noise_sd, S, e.L, delta, p.beta)
    if p.name == "glmucb":
        return GLMUCB(dim, p.reg, noise_sd, S, e.L, delta, p.beta)
    if p.name == "gpucb":
        noise = p.gp_noise if p.gp_noise is not None else max(_noise_var(cfg), 1e-6)
        return GPUCB(e.lengthscale, noise, delta, p.beta, p.gp_cap)
    if p.name == "squarecb":
        model = p.squarecb_model
        if model == "auto":
            model = "logistic" if e.bernoulli else "ridge"
        return SquareCB(K, dim, model, p.lr, p.squarecb_c, p.reg)
    if p.name == "ucb":
        return DiscountedUCB(K, 1.0, p.ucb_xi)
    if p.name == "ducb":
        return DiscountedUCB(K, p.discount, p.ucb_xi)
    if p.name == "uniform":
        return UniformRandom()
    if isinstance(env, LoggedReplay):
        raise ConfigError("the oracle policy is undefined on logged replay data")
    return OraclePolicy(env)


def build_cover(cfg: ExperimentConfig, env, T: int) -> CoveringSet:
    d = cfg.dal
    mode = d.cover
    if mode == "auto":
        mode = "linear_independent" if cfg.env.variant in ("linear", "glm", "scb") else "full_action_set"
    if isinstance(env, LoggedReplay):
        return full_cover(np.eye(env.n_actions))
    actions = env.actions
    if mode == "full_action_set":
        return full_cover(actions)
    if mode == "linear_independent":
        return build_cover_linear(actions, d.tol)
    boxed, R = normalize_to_box(actions)
    dim = actions.shape[1]
    gamma_T = d.gamma_T if d.gamma_T is not None else math.log(T) ** (dim + 1)
    ccfg = CoveringConfig("kernel_cover", d.tol, R, dim, d.p, d.q, 0.0, d.C, gamma_T)
    cover = build_cover_kernel(boxed, ccfg)
    return CoveringSet(actions[cover.indices].copy(), cover.indices)


def detector_config(cfg: ExperimentConfig, T: int) -> GlrConfig:
    d = cfg.dal
    kind = d.family
    if kind == "auto":
        kind = "bernoulli" if cfg.env.bernoulli else "gaussian"
    if kind == "bernoulli":
        family = GlrFamily.bernoulli()
    else:
        s2 = d.sigma2 if d.sigma2 is not None else (cfg.env.noise_var if cfg.env.noise_var > 0 else 0.25)
        family = GlrFamily.gaussian(s2)
    delta_F = d.delta_F if d.delta_F is not None else 1.0 / T
    return GlrConfig(family, delta_F, d.delta_D, d.max_history, d.stride)


def build_learner(cfg: ExperimentConfig, env, T: int) -> tuple[Policy, Policy]:
    """Returns (learner stepped by the loop, underlying stationary policy)."""
    policy = build_policy(cfg, env, T)
    if cfg.dal.mode != "dal":
        return policy, policy
    monitor_all = cfg.dal.monitor_all != "false"
    learner = DAL(
        policy,
        build_cover(cfg, env, T),
        T,
        detector_config(cfg, T),
        n_contexts=env.n_contexts if not isinstance(env, LoggedReplay) else 1,
        monitor_all=monitor_all,
        alpha_max=cfg.dal.alpha_max,
    )
    return learner, policy


# -- running ----------------------------------------------------------------


def run_trial(cfg: ExperimentConfig, seed: int) -> TrialResult:
    """One seeded trial; deterministic in (cfg, seed)."""
    cfg.validate()
    start = time.perf_counter()
    env_rng, pol_rng = trial_streams(seed)
    try:
        env = build_env(cfg, env_rng)
        if isinstance(env, LoggedReplay):
            result = _run_logged(cfg, env, pol_rng, seed)
        else:
            result = _run_synthetic(cfg, env, pol_rng, seed)
    except (ConfigError, TrialError):
        raise
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise TrialError(seed, f"{type(exc).__name__}: {exc}") from exc
    result.wall_time = time.perf_counter() - start
    return result


def _run_synthetic(cfg, env, rng, seed) -> TrialResult:
    T = env.T
    learner, policy = build_learner(cfg, env, T)
    oracle_resets = set(env.change_points) if cfg.dal.mode == "oracle_restart" else set()
    regret = np.empty(T)
    reward = np.empty(T)
    restarts: list[int] = []
    for t in range(1, T + 1):
        rnd = env.observe(t)
        if t in oracle_resets:
            policy.reset()
            restarts.append(t - 1)
        row = learner.select(rnd.context_id, rnd.features, rng)
        x = env.reward(row)
        learner.update(rnd.context_id, rnd.features, row, x)
        means = rnd.means
        regret[t - 1] = means.max() - means[row]
        reward[t - 1] = x
        if not math.isfinite(x):
            raise TrialError(seed, f"non-finite reward at round {t}")
    if isinstance(learner, DAL):
        restarts = list(learner.restarts)
    return TrialResult(seed, regret, reward, restarts)


def _run_logged(cfg, log: LoggedReplay, rng, seed) -> TrialResult:
    """Replay scoring: only rounds whose choice matches the displayed arm count.

    Regret is undefined on logged data and recorded as zero; the trace keeps
    one entry per retained round.
    """
    T = len(log)
    learner, _ = build_learner(cfg, log, max(T, 3))
    feats = np.eye(log.n_actions)
    rewards: list[float] = []
    for i in range(T):
        ids = log.positions(log.candidates[i])
        actions = feats[ids]
        row = learner.select(0, actions, rng, ids=ids)
        if ids[row] != log.positions(np.array([log.displayed[i]]))[0]:
            continue
        x = float(log.reward[i])
        learner.update(0, actions, row, x, ids=ids)
        rewards.append(x)
    restarts = list(learner.restarts) if isinstance(learner, DAL) else []
    return TrialResult(seed, np.zeros(len(rewards)), np.array(rewards), restarts)


def _run_seed(args) -> TrialResult:
    cfg, seed = args
    return run_trial(cfg, seed)


def run_experiment(cfg: ExperimentConfig) -> AggregateResult:
    cfg.validate()
    r = cfg.run
    seeds = [r.base_seed + i for i in range(r.n_trials)]
    workers = min(r.parallelism, r.n_trials)
    if workers == 1:
        trials = [run_trial(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_seed, [(cfg, s) for s in seeds]))
    return aggregate(trials)


def aggregate(trials: list[TrialResult]) -> AggregateResult:
    """Across-trial mean and standard error (sample std / sqrt(n)) per round."""
    if not trials:
        raise ValueError("nothing to aggregate")
    lengths = {len(tr) for tr in trials}
    if len(lengths) != 1:
        raise ValueError(f"traces have different lengths: {sorted(lengths)}")
    cum = np.stack([tr.cumulative_regret for tr in trials])
    rew = np.stack([tr.cumulative_reward for tr in trials])
    n = len(trials)
    mean = cum.mean(axis=0)
    stderr = cum.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return AggregateResult(
        t=np.arange(1, cum.shape[1] + 1),
        mean_regret=mean,
        stderr_regret=stderr,
        mean_reward=rew.mean(axis=0),
        final_regrets=cum[:, -1].copy() if cum.shape[1] else np.zeros(n),
        restart_counts=[len(tr.restarts) for tr in trials],
        wall_times=[tr.wall_time for tr in trials],
    )


CSV_HEADER = "t,mean_regret,stderr_regret,mean_reward"


def emit_csv(result: AggregateResult, path: str | Path, thin: int = 1) -> None:
    """Write every ``thin``-th round (and always the last) with 12 significant digits."""
    if thin < 1:
        raise ValueError("thin must be positive")
    keep = (result.t % thin == 0) | (result.t == result.t[-1]) if len(result.t) else np.zeros(0, bool)
    lines = [CSV_HEADER]
    for t, m, s, w in zip(result.t[keep], result.mean_regret[keep], result.stderr_regret[keep], result.mean_reward[keep]):
        lines.append(f"{t},{m:.12g},{s:.12g},{w:.12g}")
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {
        "t": data[:, 0].astype(int),
        "mean_regret": data[:, 1],
        "stderr_regret": data[:, 2],
        "mean_reward": data[:, 3],
    }
