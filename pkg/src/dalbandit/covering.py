"""Finite covering sets of actions used for forced exploration.

Parametric rewards are pinned down by their values on a maximal linearly
independent subset of the actions; kernelized rewards by their values near
the centers of a delta_T-cover of the (box-normalized) action domain.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

__all__ = [
    "CoveringSet",
    "CoveringConfig",
    "build_cover_linear",
    "build_cover_kernel",
    "full_cover",
    "delta_T",
    "kernel_cover_size",
    "normalize_to_box",
    "grid_centers",
]


@dataclass(frozen=True)
class CoveringSet:
    actions: np.ndarray
    indices: np.ndarray

    def __post_init__(self) -> None:
        if len(self.indices) == 0:
            raise ValueError("a covering set cannot be empty")
        if len(self.actions) != len(self.indices):
            raise ValueError("actions and indices must have equal length")

    @property
    def size(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return self.size


@dataclass(frozen=True)
class CoveringConfig:
    """Covering construction settings.

    ``p``, ``q`` and ``r`` are the exponents of the stationary regret bound
    d^p gamma_T^q (|A| log|Pi|)^r sqrt(T); ``r`` only matters for contextual
    bounds and is kept for reference.
    """

    mode: Literal["linear_independent", "kernel_cover", "full_action_set"] = "linear_independent"
    tol: float = 1e-8
    R: float | None = None
    d: int | None = None
    p: float = 0.0
    q: float = 0.5
    r: float = 0.0
    C: float = 1.0
    gamma_T: float | None = None

    def require_kernel_fields(self) -> None:
        missing = [k for k in ("R", "d", "gamma_T") if getattr(self, k) is None]
        if missing:
            raise ValueError(f"kernel cover needs {', '.join(missing)}")


def full_cover(actions: np.ndarray) -> CoveringSet:
    actions = np.asarray(actions, dtype=float)
    return CoveringSet(actions.copy(), np.arange(len(actions)))


def build_cover_linear(actions: np.ndarray, tol: float = 1e-8) -> CoveringSet:
    """Greedy maximal linearly independent subset, scanned in index order.

    An action joins when the norm of its residual against the span of the
    actions kept so far exceeds ``tol`` times its own norm.
    """
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 2 or len(actions) == 0:
        raise ValueError("actions must be a nonempty (K, d) array")
    d = actions.shape[1]
    basis = np.empty((0, d))
    chosen: list[int] = []
    for i, a in enumerate(actions):
        norm = np.linalg.norm(a)
        if norm == 0.0:
            continue
        resid = a.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            resid -= basis.T @ (basis @ resid)
        rnorm = np.linalg.norm(resid)
        if rnorm > tol * norm:
            basis = np.vstack([basis, resid / rnorm])
            chosen.append(i)
            if len(chosen) == d:
                break
    if not chosen:
        warnings.warn("all actions are numerically zero; covering set falls back to the first action", RuntimeWarning)
        chosen = [0]
    idx = np.array(chosen)
    return CoveringSet(actions[idx].copy(), idx)


def delta_T(cfg: CoveringConfig) -> float:
    """Cover radius R d^(1/2 - 2p/d) / (2 (C gamma_T^(2q))^(1/d))."""
    cfg.require_kernel_fields()
    R, d, p, q, C, g = cfg.R, cfg.d, cfg.p, cfg.q, cfg.C, cfg.gamma_T
    if R <= 0 or d <= 0 or C <= 0 or g <= 0:
        raise ValueError("R, d, C and gamma_T must be positive")
    if p < 0 or q < 0:
        raise ValueError("p and q must be nonnegative")
    return R * d ** (0.5 - 2.0 * p / d) / (2.0 * (C * g ** (2.0 * q)) ** (1.0 / d))


def kernel_cover_size(R: float, d: int, radius: float) -> int:
    """Number of grid balls, ceil(sqrt(d) R / (2 radius))^d."""
    return _per_axis(R, d, radius) ** d


def normalize_to_box(actions: np.ndarray) -> tuple[np.ndarray, float]:
    """Shift actions into [0, R]^d; R is the widest coordinate range."""
    actions = np.asarray(actions, dtype=float)
    shifted = actions - actions.min(axis=0)
    R = float(shifted.max()) if shifted.size else 0.0
    return shifted, (R if R > 0 else 1.0)


def build_cover_kernel(actions: np.ndarray, cfg: CoveringConfig, radius: float | None = None) -> CoveringSet:
    """Nearest actions to the centers of a grid delta_T-cover of [0, R]^d.

    ``actions`` must already lie in [0, R]^d.  Falls back to the whole action
    set when the grid would need more balls than there are actions.
    """
    actions = np.asarray(actions, dtype=float)
    K, d = actions.shape
    if radius is None:
        radius = delta_T(cfg)
    R = cfg.R
    if kernel_cover_size(R, d, radius) > K:
        return full_cover(actions)
    centers = grid_centers(R, d, radius)
    dist = ((centers[:, None, :] - actions[None, :, :]) ** 2).sum(-1)
    nearest = np.argmin(dist, axis=1)
    idx = np.array(list(dict.fromkeys(nearest.tolist())))
    return CoveringSet(actions[idx].copy(), idx)


def _per_axis(R: float, d: int, radius: float) -> int:
    x = math.sqrt(d) * R / (2.0 * radius)
    return max(math.ceil(x * (1.0 - 1e-12)), 1)


def grid_centers(R: float, d: int, radius: float) -> np.ndarray:
    """Centers of the axis-aligned grid whose cells have half-diagonal ``radius``."""
    per_axis = _per_axis(R, d, radius)
    spacing = 2.0 * radius / math.sqrt(d)
    ticks = (np.arange(per_axis) + 0.5) * spacing
    return np.array(list(itertools.product(ticks, repeat=d)))
