"""Detection augmented learning: restart a stationary policy on detected changes.

Each epoch between restarts is cut into cycles of ``ceil(N_e / alpha_k)``
steps.  A cycle opens with one forced play of every covering action, in
covering order, and hands the remaining steps to the wrapped policy.  Forced
rewards go to per-(context, action) GLR buffers; a detection on any buffer
resets the policy, clears every buffer and moves to the next epoch.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

import numpy as np

from .covering import CoveringSet
from .detect import DetectionResult, GlrConfig, ObservationBuffer, glr_scan
from .policies import Policy

__all__ = [
    "alpha_k",
    "ExplorationScheduler",
    "scheduler_position",
    "DAL",
    "min_detectable_shift",
    "never_fire",
]


def alpha_k(k: int, n_contexts: int, N_e: int, T: int, alpha_max: float = 1.0) -> float:
    """Forced exploration frequency sqrt(k |C| N_e) / (2 sqrt(T) ln^2 T), capped at ``alpha_max``."""
    if T < 3:
        raise ValueError(f"horizon must be at least 3, got {T}")
    if k < 1 or n_contexts < 1 or N_e < 1:
        raise ValueError("k, n_contexts and N_e must be positive")
    raw = math.sqrt(k * n_contexts * N_e) / (2.0 * math.sqrt(T) * math.log(T) ** 2)
    return min(raw, alpha_max)


@dataclass
class ExplorationScheduler:
    T: int
    N_e: int
    n_contexts: int = 1
    tau: int = 0
    k: int = 1
    alpha_max: float = 1.0
    alpha: float = field(init=False)
    cycle_length: int = field(init=False)

    def __post_init__(self) -> None:
        if not 0 < self.alpha_max <= 1:
            raise ValueError("alpha_max must lie in (0, 1]")
        self._recompute()

    def _recompute(self) -> None:
        self.alpha = alpha_k(self.k, self.n_contexts, self.N_e, self.T, self.alpha_max)
        self.cycle_length = max(math.ceil(self.N_e / self.alpha), self.N_e)

    def position(self, t: int) -> int | None:
        return scheduler_position(t, self)

    def restart(self, t: int) -> None:
        self.tau = t
        self.k += 1
        self._recompute()


def scheduler_position(t: int, sched: ExplorationScheduler) -> int | None:
    """1-based covering index to force at step ``t``, or ``None`` to delegate."""
    if t <= sched.tau:
        raise ValueError(f"step {t} is not after the last restart {sched.tau}")
    c = (t - sched.tau - 1) % sched.cycle_length
    return c + 1 if c < sched.N_e else None


def never_fire(buffer: ObservationBuffer) -> DetectionResult:
    return DetectionResult(False, n=buffer.count)


class DAL(Policy):
    """Wrap ``policy`` with forced exploration on ``cover`` and change detection.

    ``detector`` is a :class:`GlrConfig` or any callable mapping a buffer to a
    :class:`DetectionResult`.  With ``monitor_all`` the rewards of delegated
    plays are monitored too (finite action sets only).  Buffers are keyed by
    ``(context, action id)``, where the covering actions keep their ids in the
    environment's action set.
    """

    name = "dal"

    def __init__(
        self,
        policy: Policy,
        cover: CoveringSet,
        T: int,
        detector: GlrConfig | Callable[[ObservationBuffer], DetectionResult],
        n_contexts: int = 1,
        monitor_all: bool = False,
        alpha_max: float = 1.0,
    ) -> None:
        self.policy = policy
        self.cover = cover
        self.T = T
        self.n_contexts = n_contexts
        self.monitor_all = monitor_all
        self.alpha_max = alpha_max
        if isinstance(detector, GlrConfig):
            self.detector_config = detector
            self._detect = lambda buf: glr_scan(buf, detector)
        else:
            self.detector_config = None
            self._detect = detector
        self.reset()

    def reset(self) -> None:
        self.policy.reset()
        self.scheduler = ExplorationScheduler(self.T, self.cover.size, self.n_contexts, alpha_max=self.alpha_max)
        self.buffers: dict[tuple[int, int], ObservationBuffer] = {}
        self.t = 0
        self.restarts: list[int] = []
        self.n_forced = 0
        self._pending: tuple[int, int | None] | None = None

    @property
    def k(self) -> int:
        return self.scheduler.k

    def _buffer(self, key: tuple[int, int]) -> ObservationBuffer:
        buf = self.buffers.get(key)
        if buf is None:
            cfg = self.detector_config
            buf = ObservationBuffer(
                max_history=cfg.max_history if cfg else None,
                bounded=bool(cfg and cfg.family.kind == "bernoulli"),
            )
            self.buffers[key] = buf
        return buf

    def select(self, context, actions, rng=None, ids=None) -> int:
        t = self.t + 1
        pos = self.scheduler.position(t)
        if pos is not None:
            target = int(self.cover.indices[pos - 1])
            row = target if ids is None else _row_of(ids, target)
            if row is not None:
                self._pending = (row, pos)
                return row
        row = self.policy.select(context, actions, rng, ids=ids)
        self._pending = (row, None)
        return row

    def update(self, context, actions, index, reward, ids=None) -> bool:
        """Record the reward of the play chosen by :meth:`select`; True on restart."""
        if self._pending is None or self._pending[0] != index:
            raise RuntimeError("update must follow select with the selected index")
        _, pos = self._pending
        self._pending = None
        self.t += 1
        action_id = int(index if ids is None else ids[index])
        if pos is not None:
            self.n_forced += 1
            monitored = True
        else:
            self.policy.update(context, actions, index, reward, ids=ids)
            monitored = self.monitor_all
        if not monitored:
            return False
        buf = self._buffer((int(context), action_id))
        buf.append(reward)
        if self._detect(buf).detected:
            self.restart()
            return True
        return False

    def step(self, context, actions, feedback: Callable[[int], float], rng=None, ids=None) -> tuple[int, bool]:
        """One full round: choose, query ``feedback`` for the reward, record it."""
        row = self.select(context, actions, rng, ids=ids)
        restarted = self.update(context, actions, row, feedback(row), ids=ids)
        return row, restarted

    def restart(self) -> None:
        """Reset the policy, clear all histories and open the next epoch at the current step."""
        self.policy.reset()
        self.buffers.clear()
        self.scheduler.restart(self.t)
        self.restarts.append(self.t)


def _row_of(ids, target: int) -> int | None:
    hits = np.flatnonzero(np.asarray(ids) == target)
    return int(hits[0]) if len(hits) else None


def min_detectable_shift(model_a, model_b, cover: CoveringSet, actions: np.ndarray, contexts: Iterable | None = None) -> float:
    """Largest mean gap between two reward models over contexts x covering actions."""
    actions = np.asarray(actions, dtype=float)
    if contexts is None:
        contexts = [None]
    gap = 0.0
    for c in contexts:
        diff = np.abs(model_a.mean(actions, c) - model_b.mean(actions, c))[cover.indices]
        gap = max(gap, float(diff.max()))
    return gap
