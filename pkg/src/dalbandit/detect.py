"""Generalized likelihood ratio (GLR) change-point tests on scalar reward streams.

The test splits the buffered samples ``x_1..x_n`` at every ``s`` in ``1..n-1``
and compares

    GLR_s = s * kl(mean(x_1..s), mean(x_1..n)) + (n - s) * kl(mean(x_s+1..n), mean(x_1..n))

against ``6 ln(1 + ln n) + 5/2 ln(4 n^{3/2} / delta_F) + 11``.  Two divergence
families are supported: Bernoulli (rewards bounded in [0, 1]) and Gaussian with
a known variance proxy ``sigma2``.

Buffers keep running prefix sums so a full scan costs O(n) without
recomputing any segment mean from scratch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numba import njit

__all__ = [
    "GlrFamily",
    "GlrConfig",
    "ObservationBuffer",
    "DetectionResult",
    "kl_bernoulli",
    "kl_gaussian",
    "glr_threshold",
    "glr_statistic",
    "glr_scan",
]

DEFAULT_SIGMA2 = 0.25


@dataclass(frozen=True)
class GlrFamily:
    kind: Literal["bernoulli", "gaussian"] = "gaussian"
    sigma2: float = DEFAULT_SIGMA2

    def __post_init__(self) -> None:
        if self.kind not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown GLR family {self.kind!r}")
        if self.kind == "gaussian" and not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @classmethod
    def bernoulli(cls) -> GlrFamily:
        return cls("bernoulli")

    @classmethod
    def gaussian(cls, sigma2: float = DEFAULT_SIGMA2) -> GlrFamily:
        return cls("gaussian", sigma2)


@dataclass(frozen=True)
class GlrConfig:
    """Detector configuration.

    ``delta_D`` is carried for completeness only; the threshold depends on
    ``delta_F`` alone.  ``stride`` scans only when the buffer length is a
    multiple of it, ``max_history`` drops the oldest samples beyond that size.
    """

    family: GlrFamily = field(default_factory=GlrFamily)
    delta_F: float = 0.01
    delta_D: float | None = None
    max_history: int | None = None
    stride: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.delta_F < 1:
            raise ValueError(f"delta_F must lie in (0, 1), got {self.delta_F}")
        if self.delta_D is None:
            object.__setattr__(self, "delta_D", self.delta_F)
        elif not 0 < self.delta_D < 1:
            raise ValueError(f"delta_D must lie in (0, 1), got {self.delta_D}")
        if self.max_history is not None and self.max_history < 2:
            raise ValueError("max_history must be at least 2")
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")


@dataclass(frozen=True)
class DetectionResult:
    detected: bool
    split_index: int | None = None
    statistic: float | None = None
    n: int = 0

    def __post_init__(self) -> None:
        if self.detected != (self.split_index is not None):
            raise ValueError("split_index must be set exactly when a change is detected")

    def __bool__(self) -> bool:
        return self.detected


class ObservationBuffer:
    """Reward history of one monitored stream, with running prefix sums."""

    def __init__(self, max_history: int | None = None, bounded: bool = False) -> None:
        self.max_history = max_history
        self.bounded = bounded
        self._values = np.empty(64)
        self._prefix = np.zeros(65)
        self._n = 0

    @property
    def count(self) -> int:
        return self._n

    def __len__(self) -> int:
        return self._n

    @property
    def values(self) -> np.ndarray:
        return self._values[: self._n].copy()

    @property
    def prefix(self) -> np.ndarray:
        """Prefix sums ``P`` with ``P[0] = 0`` and ``P[i] = x_1 + ... + x_i``."""
        return self._prefix[: self._n + 1]

    def append(self, x: float) -> None:
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"non-finite observation {x}")
        if self.bounded and not 0.0 <= x <= 1.0:
            raise ValueError(f"Bernoulli GLR requires observations in [0, 1], got {x}")
        if self._n == len(self._values):
            self._values = np.concatenate([self._values, np.empty(len(self._values))])
            self._prefix = np.concatenate([self._prefix, np.zeros(len(self._values) - len(self._prefix) + 1)])
        self._values[self._n] = x
        self._prefix[self._n + 1] = self._prefix[self._n] + x
        self._n += 1
        if self.max_history is not None and self._n > self.max_history:
            drop = self._n - self.max_history
            kept = self._values[drop : self._n].copy()
            self._n = len(kept)
            self._values[: self._n] = kept
            self._prefix[0] = 0.0
            np.cumsum(kept, out=self._prefix[1 : self._n + 1])

    def extend(self, xs) -> None:
        for x in xs:
            self.append(x)

    def clear(self) -> None:
        self._n = 0
        self._prefix[0] = 0.0

    def __repr__(self) -> str:
        return f"ObservationBuffer(count={self._n})"


def kl_bernoulli(x: float, y: float) -> float:
    """KL divergence between Bernoulli(x) and Bernoulli(y), in nats."""
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"Bernoulli parameters must lie in [0, 1], got x={x}, y={y}")
    if x == y:
        return 0.0
    if y == 0.0 or y == 1.0:
        raise ValueError(f"kl_bernoulli({x}, {y}) is infinite")
    out = 0.0
    if x > 0.0:
        out += x * math.log(x / y)
    if x < 1.0:
        out += (1.0 - x) * math.log((1.0 - x) / (1.0 - y))
    return max(out, 0.0)


def kl_gaussian(x: float, y: float, sigma2: float) -> float:
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    return (x - y) ** 2 / (2.0 * sigma2)


def glr_threshold(n: int, delta_F: float) -> float:
    if n < 2:
        raise ValueError(f"threshold needs n >= 2, got {n}")
    if not 0 < delta_F < 1:
        raise ValueError(f"delta_F must lie in (0, 1), got {delta_F}")
    return 6.0 * math.log(1.0 + math.log(n)) + 2.5 * math.log(4.0 * n**1.5 / delta_F) + 11.0


@njit(cache=True)
def _klb(x, y):
    if x == y:
        return 0.0
    x = min(max(x, 0.0), 1.0)
    out = 0.0
    if x > 0.0:
        out += x * math.log(x / y)
    if x < 1.0:
        out += (1.0 - x) * math.log((1.0 - x) / (1.0 - y))
    return out


@njit(cache=True)
def _first_crossing(prefix, n, bernoulli, sigma2, threshold):
    total = prefix[n]
    mu = total / n
    if bernoulli:
        if mu <= 0.0 or mu >= 1.0:
            return 0, 0.0
        chi2_scale = mu * (1.0 - mu)
        # kl <= chi-square, so splits whose chi-square mass is clearly
        # below the threshold are skipped without evaluating logs
        cutoff = 0.999 * threshold
    for s in range(1, n):
        m1 = prefix[s] / s
        m2 = (total - prefix[s]) / (n - s)
        if bernoulli:
            bound = (s * (m1 - mu) ** 2 + (n - s) * (m2 - mu) ** 2) / chi2_scale
            if bound < cutoff:
                continue
            stat = s * _klb(m1, mu) + (n - s) * _klb(m2, mu)
        else:
            stat = (s * (m1 - mu) ** 2 + (n - s) * (m2 - mu) ** 2) / (2.0 * sigma2)
        if stat >= threshold:
            return s, stat
    return 0, 0.0


def glr_scan(buffer: ObservationBuffer, config: GlrConfig) -> DetectionResult:
    """Run the GLR test on the whole buffer; report the lowest triggering split."""
    n = buffer.count
    if n < 2 or n % config.stride:
        return DetectionResult(False, n=n)
    bernoulli = config.family.kind == "bernoulli"
    if bernoulli and not buffer.bounded:
        v = buffer.values
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("Bernoulli GLR requires observations in [0, 1]")
    threshold = glr_threshold(n, config.delta_F)
    s, stat = _first_crossing(buffer.prefix, n, bernoulli, float(config.family.sigma2), threshold)
    if s == 0:
        return DetectionResult(False, n=n)
    return DetectionResult(True, int(s), float(stat), n)


def glr_statistic(buffer: ObservationBuffer, s: int, family: GlrFamily) -> float:
    """GLR_s for a single split ``s`` (direct evaluation, no prefilter)."""
    n = buffer.count
    if not 1 <= s < n:
        raise ValueError(f"split must satisfy 1 <= s < n = {n}, got {s}")
    pre = buffer.prefix
    mu = pre[n] / n
    m1 = pre[s] / s
    m2 = (pre[n] - pre[s]) / (n - s)
    if family.kind == "bernoulli":
        return s * kl_bernoulli(m1, mu) + (n - s) * kl_bernoulli(m2, mu)
    return s * kl_gaussian(m1, mu, family.sigma2) + (n - s) * kl_gaussian(m2, mu, family.sigma2)
