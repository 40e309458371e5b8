"""Stationary bandit policies sharing a reset / select / update interface.

Every policy picks a row of an ``(K, d)`` action-feature matrix.  ``context``
is an integer context id; contextual policies read their features from the
action rows, so the harness passes the context vector tiled per action.
``ids`` optionally names the arm behind each row when only a subset of the
arms is available; index-based policies key their statistics on it.
All argmax ties resolve to the lowest index.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np
from numba import njit
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

__all__ = [
    "Policy",
    "LinUCB",
    "GLMUCB",
    "GPUCB",
    "SquareCB",
    "DiscountedUCB",
    "UniformRandom",
    "linucb_width",
    "se_kernel",
    "sigmoid",
]


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def linucb_width(t: int, dim: int, reg: float, noise_sd: float, S: float, L: float, delta: float) -> float:
    """Self-normalized confidence radius after ``t`` observations.

    noise_sd * sqrt(2 ln(1/delta) + d ln(1 + t L^2 / (reg d))) + sqrt(reg) * S
    """
    return noise_sd * math.sqrt(2.0 * math.log(1.0 / delta) + dim * math.log1p(t * L * L / (reg * dim))) + math.sqrt(
        reg
    ) * S


class Policy(ABC):
    """A stationary bandit algorithm.

    After ``reset()`` a policy must behave exactly like a fresh instance with
    the same configuration.
    """

    name = "policy"

    @abstractmethod
    def reset(self) -> None: ...

    @abstractmethod
    def select(self, context: int, actions: np.ndarray, rng: np.random.Generator, ids=None) -> int: ...

    @abstractmethod
    def update(self, context: int, actions: np.ndarray, index: int, reward: float, ids=None) -> None: ...


def _check_actions(actions: np.ndarray, dim: int | None = None) -> np.ndarray:
    actions = np.asarray(actions, dtype=float)
    if actions.ndim != 2 or len(actions) == 0:
        raise ValueError("actions must be a nonempty (K, d) array")
    if dim is not None and actions.shape[1] != dim:
        raise ValueError(f"action dimension {actions.shape[1]} does not match policy dimension {dim}")
    return actions


class LinUCB(Policy):
    """Optimistic ridge regression.

    ``beta=None`` uses the self-normalized radius from :func:`linucb_width`
    with ``delta`` (set it to 1/T); a float fixes the width.
    """

    name = "linucb"

    def __init__(
        self,
        dim: int,
        reg: float = 1.0,
        noise_sd: float = 0.1,
        S: float = 1.0,
        L: float = 1.0,
        delta: float = 0.01,
        beta: float | None = None,
    ) -> None:
        if dim < 1 or reg <= 0:
            raise ValueError("dim and reg must be positive")
        self.dim = dim
        self.reg = reg
        self.noise_sd = noise_sd
        self.S = S
        self.L = L
        self.delta = delta
        self.beta = beta
        self.reset()

    def reset(self) -> None:
        self.gram = self.reg * np.eye(self.dim)
        self.gram_inv = np.eye(self.dim) / self.reg
        self.moment = np.zeros(self.dim)
        self.n_updates = 0

    @property
    def theta(self) -> np.ndarray:
        return self.gram_inv @ self.moment

    def width(self) -> float:
        if self.beta is not None:
            return self.beta
        return linucb_width(self.n_updates, self.dim, self.reg, self.noise_sd, self.S, self.L, self.delta)

    def ucb(self, actions: np.ndarray) -> np.ndarray:
        actions = _check_actions(actions, self.dim)
        spread = np.einsum("ij,jk,ik->i", actions, self.gram_inv, actions)
        return actions @ self.theta + self.width() * np.sqrt(np.maximum(spread, 0.0))

    def select(self, context, actions, rng=None, ids=None) -> int:
        return int(np.argmax(self.ucb(actions)))

    def update(self, context, actions, index, reward, ids=None) -> None:
        a = np.asarray(actions, dtype=float)[index]
        if a.shape != (self.dim,):
            raise ValueError(f"action dimension {a.shape} does not match policy dimension {self.dim}")
        self.gram += np.outer(a, a)
        self.moment += reward * a
        # Sherman-Morrison
        va = self.gram_inv @ a
        self.gram_inv -= np.outer(va, va) / (1.0 + a @ va)
        self.n_updates += 1


class GLMUCB(LinUCB):
    """GLM-UCB with a logistic link.

    The parameter is the ridge-penalized logistic MLE, refitted after every
    update by damped Newton steps and projected onto the ``S``-ball.  The
    optimism bonus is the linear radius scaled by the link's Lipschitz
    constant (1/4 for the sigmoid) unless ``beta`` is given.
    """

    name = "glmucb"
    link_lipschitz = 0.25

    def __init__(self, dim, reg=1.0, noise_sd=0.5, S=1.0, L=1.0, delta=0.01, beta=None, max_iter=50, tol=1e-8):
        self.max_iter = max_iter
        self.tol = tol
        super().__init__(dim, reg=reg, noise_sd=noise_sd, S=S, L=L, delta=delta, beta=beta)

    def reset(self) -> None:
        super().reset()
        self._X = np.empty((64, self.dim))
        self._r = np.empty(64)
        self._theta = np.zeros(self.dim)
        self.fit_failures = 0

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    def width(self) -> float:
        if self.beta is not None:
            return self.beta
        return self.link_lipschitz * super().width()

    def ucb(self, actions: np.ndarray) -> np.ndarray:
        actions = _check_actions(actions, self.dim)
        spread = np.einsum("ij,jk,ik->i", actions, self.gram_inv, actions)
        return sigmoid(actions @ self._theta) + self.width() * np.sqrt(np.maximum(spread, 0.0))

    def update(self, context, actions, index, reward, ids=None) -> None:
        a = np.asarray(actions, dtype=float)[index]
        n = self.n_updates
        if n == len(self._r):
            self._X = np.concatenate([self._X, np.empty_like(self._X)])
            self._r = np.concatenate([self._r, np.empty_like(self._r)])
        self._X[n] = a
        self._r[n] = reward
        super().update(context, actions, index, reward)
        self._refit()

    def _refit(self) -> None:
        X = self._X[: self.n_updates]
        r = self._r[: self.n_updates]
        theta = fit_logistic(X, r, self.reg, start=self._theta, max_iter=self.max_iter, tol=self.tol)
        if theta is None:
            self.fit_failures += 1
            return
        norm = np.linalg.norm(theta)
        if norm > self.S:
            theta *= self.S / norm
        self._theta = theta


def fit_logistic(X, r, reg, start=None, max_iter=50, tol=1e-8):
    """Ridge-penalized logistic MLE by damped Newton; ``None`` if it fails to converge."""
    d = X.shape[1]
    theta = np.zeros(d) if start is None else np.array(start, dtype=float)

    def loss(th):
        z = X @ th
        return np.sum(np.logaddexp(0.0, z) - r * z) + 0.5 * reg * th @ th

    f = loss(theta)
    for _ in range(max_iter):
        p = sigmoid(X @ theta)
        grad = X.T @ (p - r) + reg * theta
        if np.linalg.norm(grad) < tol:
            return theta
        hess = (X * (p * (1.0 - p))[:, None]).T @ X + reg * np.eye(d)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            cand = theta - t * step
            fc = loss(cand)
            if fc <= f - 1e-4 * t * grad @ step or t < 1e-10:
                break
            t *= 0.5
        if not np.all(np.isfinite(cand)):
            return None
        theta, f = cand, fc
    p = sigmoid(X @ theta)
    if np.linalg.norm(X.T @ (p - r) + reg * theta) < max(tol, 1e-6):
        return theta
    return None


def se_kernel(A: np.ndarray, B: np.ndarray, lengthscale: float) -> np.ndarray:
    """Squared-exponential kernel exp(-|a - b|^2 / (2 l^2)); k(x, x) = 1."""
    sq = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return np.exp(-sq / (2.0 * lengthscale**2))


class GPUCB(Policy):
    """GP-UCB with an SE kernel and an incrementally maintained Cholesky factor.

    Observations beyond ``cap`` are dropped oldest-first (rank-one update of
    the trailing factor).  ``beta=None`` uses 2 ln(K t^2 pi^2 / (6 delta)).
    For a fixed action set the solved kernel columns ``L^-1 k(X, A)`` are
    extended one row per update instead of re-solved.
    """

    name = "gpucb"

    def __init__(self, lengthscale=0.2, noise_var=0.01, delta=0.01, beta=None, cap=2000):
        if noise_var <= 0 or lengthscale <= 0:
            raise ValueError("noise_var and lengthscale must be positive")
        self.lengthscale = lengthscale
        self.noise_var = noise_var
        self.delta = delta
        self.beta = beta
        self.cap = cap
        self.reset()

    def reset(self) -> None:
        self._n = 0
        self._L = np.zeros((0, 0))
        self._X: np.ndarray | None = None
        self._y = np.zeros(0)
        self._w = np.zeros(0)  # L^-1 y
        self._A: np.ndarray | None = None
        self._V = np.zeros((0, 0))  # L^-1 k(X, A), valid for the first _n rows
        self.n_updates = 0

    @property
    def chol(self) -> np.ndarray:
        return self._L[: self._n, : self._n]

    @property
    def X(self) -> np.ndarray:
        return self._X[: self._n] if self._X is not None else np.empty((0, 0))

    @property
    def y(self) -> np.ndarray:
        return self._y[: self._n]

    def kernel(self, A, B):
        return se_kernel(A, B, self.lengthscale)

    def posterior(self, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        n = self._n
        if n == 0:
            return np.zeros(len(Q)), np.ones(len(Q))
        if self._A is not None and (Q is self._A or (Q.shape == self._A.shape and np.array_equal(Q, self._A))):
            v = self._V[:n]
        else:
            v = solve_triangular(self.chol, self.kernel(self.X, Q), lower=True, check_finite=False)
            self._A = Q.copy()
            self._V = _grown(v, max(2 * n, 16))
        w = self._w[:n]
        mean = v.T @ w
        var = 1.0 - np.einsum("ij,ij->j", v, v)
        return mean, np.maximum(var, 0.0)

    def width(self, n_actions: int) -> float:
        if self.beta is not None:
            return self.beta
        t = self.n_updates + 1
        return math.sqrt(2.0 * math.log(n_actions * t * t * math.pi**2 / (6.0 * self.delta)))

    def select(self, context, actions, rng=None, ids=None) -> int:
        actions = _check_actions(actions)
        mean, var = self.posterior(actions)
        return int(np.argmax(mean + self.width(len(actions)) * np.sqrt(var)))

    def update(self, context, actions, index, reward, ids=None) -> None:
        actions = np.asarray(actions, dtype=float)
        x = actions[index]
        row = None
        if self._A is not None and actions.shape == self._A.shape and np.array_equal(actions, self._A):
            row = self._V[: self._n, index].copy()
        self._append(x, float(reward), row)
        if self._n > self.cap:
            self._drop_oldest()
        self.n_updates += 1

    def _append(self, x, y, row=None):
        """Add one observation; ``row`` may carry a precomputed L^-1 k(X, x)."""
        n = self._n
        if self._X is None:
            self._X = np.zeros((16, len(x)))
        if n + 1 > len(self._L):
            size = max(2 * len(self._L), 16)
            self._L = _grown(_grown(self._L, size).T, size).T
            self._X = _grown(self._X, size)
            self._y = _grown(self._y, size)
            self._w = _grown(self._w, size)
        if row is not None:
            pass
        elif n:
            k = self.kernel(self._X[:n], x[None, :])[:, 0]
            row = solve_triangular(self.chol, k, lower=True, check_finite=False)
        else:
            row = np.zeros(0)
        diag2 = 1.0 + self.noise_var - row @ row
        jitter = 1e-8
        for _ in range(3):
            if diag2 > 0:
                break
            diag2 += jitter
            jitter *= 10
        else:
            raise np.linalg.LinAlgError("GP kernel matrix is not positive definite after jitter")
        lnn = math.sqrt(diag2)
        self._L[n, :n] = row
        self._L[n, n] = lnn
        self._X[n] = x
        self._y[n] = y
        self._w[n] = (y - row @ self._w[:n]) / lnn
        if self._A is not None:
            if n + 1 > len(self._V):
                self._V = _grown(self._V, max(2 * len(self._V), 16))
            self._V[n] = (self.kernel(x[None, :], self._A)[0] - row @ self._V[:n]) / lnn
        self._n = n + 1

    def _drop_oldest(self):
        n = self._n
        # L22 L22^T + l21 l21^T is the factor of the trailing block
        L = _chol_rank_one_update(self._L[1:n, 1:n].copy(), self._L[1:n, 0].copy())
        self._L[: n - 1, : n - 1] = L
        self._L[n - 1, :] = 0.0
        self._L[:, n - 1] = 0.0
        self._X[: n - 1] = self._X[1:n]
        self._y[: n - 1] = self._y[1:n]
        self._n = n - 1
        self._w[: n - 1] = solve_triangular(self.chol, self.y, lower=True, check_finite=False)
        self._A = None


def _grown(arr: np.ndarray, size: int) -> np.ndarray:
    """Copy of ``arr`` with its first axis zero-padded to ``size``."""
    out = np.zeros((size,) + arr.shape[1:])
    out[: len(arr)] = arr
    return out


@njit(cache=True)
def _chol_rank_one_update(L, x):
    n = len(x)
    for k in range(n):
        r = math.hypot(L[k, k], x[k])
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        for i in range(k + 1, n):
            L[i, k] = (L[i, k] + s * x[i]) / c
            x[i] = c * x[i] - s * L[i, k]
    return L


class SquareCB(Policy):
    """Inverse-gap weighting over per-action online regressors.

    ``model="ridge"`` keeps an exact online ridge fit per action;
    ``model="logistic"`` takes one gradient step of size ``lr`` per update and
    predicts through the sigmoid.  Exploration scale gamma_t = c sqrt(K t).
    """

    name = "squarecb"

    def __init__(self, n_actions, dim, model="logistic", lr=0.05, c=1.0, reg=1.0):
        if model not in ("ridge", "logistic"):
            raise ValueError(f"unknown SquareCB regressor {model!r}")
        self.n_actions = n_actions
        self.dim = dim
        self.model = model
        self.lr = lr
        self.c = c
        self.reg = reg
        self.reset()

    def reset(self) -> None:
        K, d = self.n_actions, self.dim
        self.weights = np.zeros((K, d))
        if self.model == "ridge":
            self.gram_inv = np.tile(np.eye(d) / self.reg, (K, 1, 1))
            self.moment = np.zeros((K, d))
        self.n_updates = 0

    def predict(self, actions: np.ndarray, ids=None) -> np.ndarray:
        actions = _check_actions(actions, self.dim)
        w = self.weights[: len(actions)] if ids is None else self.weights[np.asarray(ids)]
        z = np.einsum("ij,ij->i", w, actions)
        return sigmoid(z) if self.model == "logistic" else z

    def gamma(self) -> float:
        return self.c * math.sqrt(self.n_actions * (self.n_updates + 1))

    def probabilities(self, actions: np.ndarray, ids=None) -> np.ndarray:
        yhat = self.predict(actions, ids)
        K = len(yhat)
        best = int(np.argmax(yhat))
        p = 1.0 / (K + self.gamma() * (yhat[best] - yhat))
        p[best] = 0.0
        p[best] = 1.0 - p.sum()
        return p

    def select(self, context, actions, rng, ids=None) -> int:
        p = self.probabilities(actions, ids)
        u = rng.random()
        return int(min(np.searchsorted(np.cumsum(p), u, side="right"), len(p) - 1))

    def update(self, context, actions, index, reward, ids=None) -> None:
        x = np.asarray(actions, dtype=float)[index]
        arm = index if ids is None else int(ids[index])
        if self.model == "ridge":
            Vinv = self.gram_inv[arm]
            vx = Vinv @ x
            Vinv -= np.outer(vx, vx) / (1.0 + x @ vx)
            self.moment[arm] += reward * x
            self.weights[arm] = Vinv @ self.moment[arm]
        else:
            w = self.weights[arm]
            w -= self.lr * (sigmoid(w @ x) - reward) * x
        self.n_updates += 1


class DiscountedUCB(Policy):
    """UCB over a finite arm set with discounted statistics.

    ``gamma=1`` is UCB1 (``xi=2``); ``gamma<1`` gives D-UCB.  Arms never
    pulled are played first, lowest index first.
    """

    name = "ducb"

    def __init__(self, n_actions: int, gamma: float = 1.0, xi: float = 2.0, scale: float = 1.0) -> None:
        if not 0 < gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        self.n_actions = n_actions
        self.gamma = gamma
        self.xi = xi
        self.scale = scale
        self.reset()

    def reset(self) -> None:
        self.counts = np.zeros(self.n_actions)
        self.sums = np.zeros(self.n_actions)
        self.pulls = np.zeros(self.n_actions, dtype=int)

    @property
    def means(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.sums / self.counts, 0.0)

    def select(self, context=None, actions=None, rng=None, ids=None) -> int:
        if ids is None:
            ids = np.arange(self.n_actions if actions is None else len(actions))
        ids = np.asarray(ids)
        unexplored = np.flatnonzero(self.pulls[ids] == 0)
        if len(unexplored):
            return int(unexplored[0])
        n_total = self.counts.sum()
        bonus = self.scale * np.sqrt(self.xi * math.log(max(n_total, 1.0)) / self.counts[ids])
        return int(np.argmax(self.means[ids] + bonus))

    def update(self, context, actions, index, reward, ids=None) -> None:
        arm = index if ids is None else int(ids[index])
        if self.gamma < 1.0:
            self.counts *= self.gamma
            self.sums *= self.gamma
        self.counts[arm] += 1.0
        self.sums[arm] += reward
        self.pulls[arm] += 1


class UniformRandom(Policy):
    name = "uniform"

    def reset(self) -> None:
        pass

    def select(self, context, actions, rng, ids=None) -> int:
        return int(rng.integers(len(actions)))

    def update(self, context, actions, index, reward, ids=None) -> None:
        pass
