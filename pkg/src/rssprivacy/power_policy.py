"""Discrete transmit-power distributions.

An anchor draws each frame's power from a pmf over a small set of levels.
Three policies are provided, all matched to the same average power:

* ``uniform``: equal weights (its mean is whatever the level average is);
* ``discretized_normal``: Gaussian weights with the center shifted until the
  pmf mean hits the target;
* ``discretized_exponential``: the maximum-entropy pmf under a mean-power
  constraint, ``p_i = k * exp(-alpha * x_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import entr, logsumexp

from .signal_model import dbm_to_mw

UNIFORM = "uniform"
NORMAL = "discretized_normal"
EXPONENTIAL = "discretized_exponential"
POLICY_KINDS = (UNIFORM, NORMAL, EXPONENTIAL)

DEFAULT_LEVELS_DBM = (-10.0, -6.0, -3.0, 0.0)
DEFAULT_MU_DBM = -3.0

_MAX_ITER = 200
_ALPHA_TOL = 1e-12


class InfeasibleMean(ValueError):
    """The requested mean is not strictly inside the level range."""


@dataclass(frozen=True)
class PowerLevelSet:
    """Strictly increasing, positive transmit powers in mW (at least two)."""

    levels: NDArray[np.float64]

    def __post_init__(self) -> None:
        levels = np.asarray(self.levels, dtype=float)
        if levels.ndim != 1 or levels.size < 2:
            raise ValueError("need at least two power levels")
        if np.any(~np.isfinite(levels)) or np.any(levels <= 0):
            raise ValueError("power levels must be finite and > 0")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("power levels must be strictly increasing")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def from_dbm(cls, dbm: ArrayLike) -> "PowerLevelSet":
        return cls(dbm_to_mw(np.asarray(dbm, dtype=float)))

    @classmethod
    def default(cls) -> "PowerLevelSet":
        return cls.from_dbm(DEFAULT_LEVELS_DBM)

    @property
    def n(self) -> int:
        return self.levels.size

    def __len__(self) -> int:
        return self.levels.size

    def check_mean(self, mu: float) -> None:
        lo, hi = self.levels[0], self.levels[-1]
        if not (lo < mu < hi):
            raise InfeasibleMean(f"mean outside level range: mu={mu!r} not in ({lo!r}, {hi!r})")


@dataclass(frozen=True)
class PowerDistribution:
    level_set: PowerLevelSet
    probs: NDArray[np.float64]
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != self.level_set.levels.shape:
            raise ValueError("one probability per level is required")
        if np.any(probs < 0) or np.any(probs > 1) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must lie in [0, 1] and sum to 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def levels(self) -> NDArray[np.float64]:
        return self.level_set.levels

    @property
    def cdf(self) -> NDArray[np.float64]:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c


def entropy(dist: PowerDistribution) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    return float(np.sum(entr(dist.probs)))


def mean_power(dist: PowerDistribution) -> float:
    return float(np.dot(dist.levels, dist.probs))


def make_uniform(levels: PowerLevelSet) -> PowerDistribution:
    return PowerDistribution(levels, np.full(levels.n, 1.0 / levels.n), UNIFORM)


def _bisect_decreasing(g: Callable[[float], float], target: float, start: float = 0.0) -> float:
    """Root of ``g(t) = target`` for strictly decreasing ``g``.

    Expands a bracket around ``start`` geometrically, then bisects to an
    absolute tolerance of 1e-12.
    """
    lo, hi = start - 1.0, start + 1.0
    for _ in range(_MAX_ITER):
        if g(lo) >= target:
            break
        lo = start - 2.0 * (start - lo)
    else:
        raise RuntimeError("failed to bracket root from below")
    for _ in range(_MAX_ITER):
        if g(hi) <= target:
            break
        hi = start + 2.0 * (hi - start)
    else:
        raise RuntimeError("failed to bracket root from above")
    for _ in range(_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if hi - lo <= _ALPHA_TOL or mid in (lo, hi):
            break
        if g(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def exponential_probs(levels: NDArray, alpha: float) -> tuple[NDArray, float]:
    """Probabilities ``k exp(-alpha x)`` and the normalizer ``log k``."""
    log_k = -float(logsumexp(-alpha * levels))
    return np.exp(log_k - alpha * levels), log_k


def exponential_mean(levels: NDArray, alpha: float) -> float:
    """Mean of the tilted pmf; strictly decreasing in ``alpha``."""
    probs, _ = exponential_probs(levels, alpha)
    return float(np.dot(levels, probs))


def solve_max_entropy(levels: PowerLevelSet, mu: float) -> PowerDistribution:
    """Maximum-entropy pmf over ``levels`` with mean power ``mu`` (mW).

    Stationarity of the Lagrangian forces ``p_i = k exp(-alpha x_i)``; the
    normalization fixes ``k`` given ``alpha`` and the mean constraint leaves
    a single monotone equation in ``alpha``, solved by bracketed bisection.
    ``alpha`` is negative when ``mu`` is above the plain level average.
    """
    levels.check_mean(mu)
    x = levels.levels
    # Work on a unit scale so the bracket expansion starts near the answer.
    scale = x[-1] - x[0]
    u = x / scale
    beta = _bisect_decreasing(lambda b: exponential_mean(u, b), mu / scale)
    alpha = beta / scale
    probs, log_k = exponential_probs(x, alpha)
    # Final Newton polish on the mean equation; d mean / d alpha = -variance.
    for _ in range(3):
        m = float(np.dot(x, probs))
        var = float(np.dot((x - m) ** 2, probs))
        if var <= 0 or abs(m - mu) <= 1e-14 * mu:
            break
        alpha += (m - mu) / var
        probs, log_k = exponential_probs(x, alpha)
    return PowerDistribution(
        levels, probs, EXPONENTIAL, {"k": float(np.exp(log_k)), "log_k": log_k, "alpha": alpha}
    )


def make_discretized_normal(
    levels: PowerLevelSet, mu: float, spread: float | None = None
) -> PowerDistribution:
    """Gaussian-shaped pmf with its mean matched to ``mu``.

    ``spread`` is the Gaussian width in mW; default is a quarter of the
    level span.  The center is solved so that the pmf mean equals ``mu``.
    """
    levels.check_mean(mu)
    x = levels.levels
    span = x[-1] - x[0]
    if spread is None:
        spread = span / 4.0
    if not spread > 0:
        raise ValueError("spread must be > 0")

    def probs_at(center: float) -> NDArray:
        # expanded square: stays accurate when the center is far outside the levels
        logw = (x * center - 0.5 * x * x) / spread**2
        p = np.exp(logw - logsumexp(logw))
        return p / p.sum()

    # mean is increasing in the center; negate to reuse the decreasing solver
    u0 = float(np.mean(x))
    t = _bisect_decreasing(lambda c: -float(np.dot(x, probs_at(u0 + c * span))), -mu)
    center = u0 + t * span
    for _ in range(3):
        # Newton polish: d(mean)/d(center) = variance / spread^2
        probs = probs_at(center)
        m = float(np.dot(x, probs))
        var = float(np.dot((x - m) ** 2, probs))
        if var <= 0 or m == mu:
            break
        center -= (m - mu) * spread**2 / var
    probs = probs_at(center)
    return PowerDistribution(levels, probs, NORMAL, {"center": center, "spread": float(spread)})


def make_policy(
    kind: str, levels: PowerLevelSet, mu: float, spread: float | None = None
) -> PowerDistribution:
    if kind == UNIFORM:
        return make_uniform(levels)
    if kind == NORMAL:
        return make_discretized_normal(levels, mu, spread)
    if kind == EXPONENTIAL:
        return solve_max_entropy(levels, mu)
    raise ValueError(f"unknown policy {kind!r}; expected one of {POLICY_KINDS}")


def sample_power(
    dist: PowerDistribution, rng: np.random.Generator, size: int | None = None
) -> tuple[NDArray[np.intp], NDArray[np.float64]] | tuple[int, float]:
    """Inverse-CDF draw of level indices and their powers in mW."""
    u = rng.random(size)
    idx = np.searchsorted(dist.cdf, u, side="right")
    idx = np.minimum(idx, dist.level_set.n - 1)
    if size is None:
        return int(idx), float(dist.levels[idx])
    return idx, dist.levels[idx]
