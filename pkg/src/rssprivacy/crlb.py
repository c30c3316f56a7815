"""Cramer-Rao bounds on the channel-gain estimate.

Per-frame second derivatives of ``log f(z | h, x)``, with ``a = h x``,
``t = sqrt(z a)/s2``, ``R = I1(t)/I0(t)``::

    d2/dh2   = z x (1 - R^2 - 2R/t) / (4 h s2^2)
    d2/dhdx  = -(1/4) (2/s2 - z/s2^2 + z R^2 / s2^2)
    d2/dx2   = z h (1 - R^2 - 2R/t) / (4 x s2^2)

Frames are independent and each power appears in one frame only, so the
un-trusted Fisher matrix over ``(h, x_1..x_m)`` is an arrow: a dense first
row and column plus a diagonal.

Because the density depends on ``h`` and ``x`` only through ``h x``, the
exact un-trusted Fisher matrix has the null vector ``(h, -x_1, ..., -x_m)``:
scaling ``h`` up and every power down by the same factor leaves the data
distribution unchanged.  Its Schur complement is therefore zero in
expectation and a Monte Carlo estimate of it is pure sampling noise.
:func:`energy_constrained_crlb` removes that direction by fixing the total
transmitted energy over the window, which gives a finite bound that is
never below the trusted one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .power_policy import PowerDistribution, sample_power
from .signal_model import ChannelParams, DomainError, bessel_ratio_over_arg, sample_received_power

TRUSTED = "trusted"
UNTRUSTED = "untrusted"


class SingularFisher(ArithmeticError):
    """The Fisher matrix cannot be inverted for the gain entry."""


def _prepare(z, h, x, sigma2):
    z, h, x, sigma2 = (np.asarray(v, dtype=float) for v in (z, h, x, sigma2))
    if np.any(z < 0):
        raise DomainError("z must be >= 0")
    if np.any(h <= 0) or np.any(x <= 0) or np.any(sigma2 <= 0):
        raise DomainError("h, x and sigma2 must be > 0")
    t = np.sqrt(z * h * x) / sigma2
    q = bessel_ratio_over_arg(t)
    return z, h, x, sigma2, q * t, q


def _scalar(v: NDArray):
    return v if v.ndim else float(v)


def d2_loglik_dh2(z: ArrayLike, h: ArrayLike, x: ArrayLike, sigma2: ArrayLike):
    z, h, x, s2, r, q = _prepare(z, h, x, sigma2)
    return _scalar(z * x * (1.0 - r * r - 2.0 * q) / (4.0 * h * s2 * s2))


def d2_loglik_dx2(z: ArrayLike, h: ArrayLike, x: ArrayLike, sigma2: ArrayLike):
    z, h, x, s2, r, q = _prepare(z, h, x, sigma2)
    return _scalar(z * h * (1.0 - r * r - 2.0 * q) / (4.0 * x * s2 * s2))


def d2_loglik_dhdx(z: ArrayLike, h: ArrayLike, x: ArrayLike, sigma2: ArrayLike):
    """Mixed partial; the same expression serves both orders of differentiation."""
    z, h, x, s2, r, q = _prepare(z, h, x, sigma2)
    return _scalar(-0.25 * (2.0 / s2 - z / (s2 * s2) + z * r * r / (s2 * s2)))


@dataclass(frozen=True)
class FisherConfig:
    h: float
    power_sequence: tuple[float, ...]
    sigma2: float
    mc_samples: int = 20_000
    seed: int = 0

    def __post_init__(self) -> None:
        xs = tuple(float(v) for v in self.power_sequence)
        object.__setattr__(self, "power_sequence", xs)
        if self.h <= 0 or self.sigma2 <= 0 or not xs or min(xs) <= 0:
            raise DomainError("h, sigma2 and all powers must be > 0; need m >= 1")
        if self.mc_samples < 1000:
            raise ValueError("mc_samples must be >= 1000")


@dataclass(frozen=True)
class FisherMatrix:
    """Fisher information with per-entry Monte Carlo standard errors.

    For the un-trusted view index 0 is ``h`` and ``1..m`` are the powers.
    """

    entries: NDArray[np.float64]
    stderr: NDArray[np.float64]
    view: str
    structure: str = "arrow"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def f_hh(self) -> float:
        return float(self.entries[0, 0])

    @property
    def f_hx(self) -> NDArray:
        return self.entries[0, 1:]

    @property
    def f_xx(self) -> NDArray:
        return np.diag(self.entries)[1:]


def arrow_matrix(f_hh: float, f_hx: ArrayLike, f_xx: ArrayLike) -> NDArray[np.float64]:
    f_hx = np.asarray(f_hx, dtype=float)
    m = f_hx.size
    out = np.zeros((m + 1, m + 1))
    out[0, 0] = f_hh
    out[0, 1:] = f_hx
    out[1:, 0] = f_hx
    out[np.arange(1, m + 1), np.arange(1, m + 1)] = np.asarray(f_xx, dtype=float)
    return out


def fisher_matrix(cfg: FisherConfig, view: Literal["trusted", "untrusted"] = UNTRUSTED) -> FisherMatrix:
    """Expected negative Hessian at the true parameters, by Monte Carlo.

    Each frame's entries are averaged over ``mc_samples`` draws of its
    received power; the same draws feed all three entries of that frame.
    """
    if view not in (TRUSTED, UNTRUSTED):
        raise ValueError(f"view must be {TRUSTED!r} or {UNTRUSTED!r}")
    x = np.asarray(cfg.power_sequence)
    m, n = x.size, cfg.mc_samples
    rng = np.random.default_rng(cfg.seed)
    params = ChannelParams(cfg.sigma2)
    z = sample_received_power(cfg.h, x[:, None], params, rng, size=(m, n))
    hh = -d2_loglik_dh2(z, cfg.h, x[:, None], cfg.sigma2)

    def mean_se(v):
        return v.mean(axis=1), v.std(axis=1, ddof=1) / np.sqrt(n)

    hh_mean, hh_se = mean_se(hh)
    meta = {"h": cfg.h, "x": x.copy(), "sigma2": cfg.sigma2, "mc_samples": n}
    if view == TRUSTED:
        # sum of independent per-frame means; errors add in quadrature
        return FisherMatrix(
            np.array([[hh_mean.sum()]]),
            np.array([[np.sqrt(np.sum(hh_se**2))]]),
            TRUSTED,
            "scalar",
            meta,
        )
    hx_mean, hx_se = mean_se(-d2_loglik_dhdx(z, cfg.h, x[:, None], cfg.sigma2))
    xx_mean, xx_se = mean_se(-d2_loglik_dx2(z, cfg.h, x[:, None], cfg.sigma2))
    entries = arrow_matrix(hh_mean.sum(), hx_mean, xx_mean)
    stderr = arrow_matrix(np.sqrt(np.sum(hh_se**2)), hx_se, xx_se)
    return FisherMatrix(entries, stderr, UNTRUSTED, "arrow", meta)


def crlb_gain_variance(fisher: FisherMatrix | ArrayLike) -> float:
    """``[F^-1]_{hh}`` via the arrow-matrix Schur complement (O(m)).

    Raises
    ------
    SingularFisher
        If a power diagonal entry is negligible against ``F_hh`` or the
        Schur complement is not positive.
    """
    f = fisher.entries if isinstance(fisher, FisherMatrix) else np.asarray(fisher, dtype=float)
    f_hh = float(f[0, 0])
    if f_hh <= 0:
        raise SingularFisher(f"F_hh = {f_hh!r} is not positive")
    if f.shape == (1, 1):
        return 1.0 / f_hh
    f_hx, f_xx = f[0, 1:], np.diag(f)[1:]
    if np.any(f_xx <= 1e-14 * f_hh):
        raise SingularFisher("power diagonal entry is zero relative to F_hh")
    schur = f_hh - float(np.sum(f_hx**2 / f_xx))
    if schur <= 0:
        raise SingularFisher(f"Schur complement {schur!r} is not positive")
    return 1.0 / schur


def energy_constrained_crlb(fisher: FisherMatrix | ArrayLike) -> float:
    """Gain bound for an un-trusted receiver that knows the window's total power.

    Adds the constraint ``sum(x) = const`` to the arrow Fisher matrix and
    returns the gain entry of the constrained bound
    ``U (U^T F U)^-1 U^T`` with ``U`` spanning the constraint's tangent
    space.  With ``D = diag(F_xx)`` and ``b = F_hx`` this reduces to::

        1 / (F_hh - sum(b^2/D) + sum(b/D)^2 / sum(1/D))

    By Cauchy-Schwarz the denominator never exceeds ``F_hh``, so the value
    is at least the trusted bound computed from the same matrix.
    """
    f = fisher.entries if isinstance(fisher, FisherMatrix) else np.asarray(fisher, dtype=float)
    if f.shape == (1, 1):
        raise ValueError("constrained bound needs the un-trusted arrow matrix")
    f_hh = float(f[0, 0])
    f_hx, f_xx = f[0, 1:], np.diag(f)[1:]
    if f_hh <= 0 or np.any(f_xx <= 1e-14 * f_hh):
        raise SingularFisher("Fisher matrix diagonal is not positive")
    inv_d = 1.0 / f_xx
    denom = f_hh - float(np.sum(f_hx**2 * inv_d)) + float(np.sum(f_hx * inv_d)) ** 2 / float(np.sum(inv_d))
    if denom <= 0:
        raise SingularFisher(f"constrained information {denom!r} is not positive")
    return 1.0 / denom


@dataclass(frozen=True)
class CrlbRow:
    view: str
    policy: str
    m: int
    crlb_mean: float
    crlb_stderr: float
    trials: int
    seed: int


def crlb_curve(
    policy: PowerDistribution,
    h: float,
    sigma2: float,
    m_values: Iterable[int],
    trials: int = 30,
    seed: int = 0,
    mc_samples: int = 20_000,
) -> list[CrlbRow]:
    """Average trusted and un-trusted gain bounds over random power sequences.

    For every ``m`` the policy draws ``trials`` power sequences; each
    sequence gets one Monte Carlo Fisher matrix whose ``F_hh`` gives the
    trusted bound and whose arrow form gives the energy-constrained
    un-trusted bound.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    rows: list[CrlbRow] = []
    for m in m_values:
        trusted, untrusted = [], []
        for trial in range(trials):
            ss = np.random.SeedSequence([seed, int(m), trial])
            seq_seed, mc_seed = ss.spawn(2)
            _, x = sample_power(policy, np.random.default_rng(seq_seed), int(m))
            cfg = FisherConfig(h, tuple(x), sigma2, mc_samples, int(mc_seed.generate_state(1)[0]))
            fm = fisher_matrix(cfg, UNTRUSTED)
            trusted.append(1.0 / fm.f_hh)
            untrusted.append(energy_constrained_crlb(fm))
        for view, vals in ((TRUSTED, trusted), (UNTRUSTED, untrusted)):
            v = np.asarray(vals)
            rows.append(
                CrlbRow(view, policy.kind, int(m), float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)), trials, seed)
            )
    return rows


def curve_by_view(rows: Sequence[CrlbRow], view: str) -> tuple[NDArray, NDArray]:
    sel = [r for r in rows if r.view == view]
    return np.array([r.m for r in sel]), np.array([r.crlb_mean for r in sel])
