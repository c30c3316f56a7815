"""Line-of-sight received-power model under additive white Gaussian noise.

The received power ``z`` of a frame sent at power ``x`` over a channel with
gain ``h`` follows a scaled noncentral chi-square law with two degrees of
freedom::

    f(z | h, x) = 1/(2 s2) * exp(-(z + h x) / (2 s2)) * I0(sqrt(z h x) / s2)

where ``2 s2`` is the total noise variance.  All evaluation happens in the
log domain; ``I0`` is handled through its exponentially scaled form so that
arguments of order 1e5 and beyond stay finite.

Powers are linear milliwatts everywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import i0e, i1e


class DomainError(ValueError):
    """Raised when a model input lies outside its mathematical domain."""


@dataclass(frozen=True)
class ChannelParams:
    """Noise level and log-distance path-loss mapping.

    Attributes
    ----------
    sigma2 : float
        Noise variance per real dimension (mW).  Total noise power is
        ``2 * sigma2``.
    path_loss_ref_gain : float
        Channel gain at ``ref_distance``.
    path_loss_exponent : float
        Path-loss exponent ``eta``.
    ref_distance : float
        Reference distance in meters.
    """

    sigma2: float
    path_loss_ref_gain: float = 1e-2
    path_loss_exponent: float = 2.0
    ref_distance: float = 1.0

    def __post_init__(self) -> None:
        for name in ("sigma2", "path_loss_ref_gain", "path_loss_exponent", "ref_distance"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise DomainError(f"{name} must be finite and > 0, got {value!r}")

    def with_sigma2(self, sigma2: float) -> "ChannelParams":
        return ChannelParams(sigma2, self.path_loss_ref_gain, self.path_loss_exponent, self.ref_distance)


@dataclass(frozen=True)
class ObservationSet:
    """Received powers with the transmit power used for each frame.

    ``x_known`` marks the view: ``True`` for a trusted receiver that learns
    every frame's power, ``False`` for an eavesdropper.  The transmit powers
    are kept in both views so simulations can score the eavesdropper, but
    estimators for the hidden view never read them.
    """

    z: NDArray[np.float64]
    x: NDArray[np.float64]
    x_known: bool = True

    def __post_init__(self) -> None:
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if z.ndim != 1 or z.shape != x.shape:
            raise DomainError("z and x must be 1-D arrays of equal length")
        if np.any(~np.isfinite(z)) or np.any(z < 0):
            raise DomainError("received powers must be finite and >= 0")
        if np.any(~np.isfinite(x)) or np.any(x <= 0):
            raise DomainError("transmit powers must be finite and > 0")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)

    def __len__(self) -> int:
        return self.z.size

    def hidden(self) -> "ObservationSet":
        """The same frames as seen by a receiver that does not know ``x``."""
        return ObservationSet(self.z, self.x, x_known=False)

    def revealed(self) -> "ObservationSet":
        return ObservationSet(self.z, self.x, x_known=True)

    def concat(self, other: "ObservationSet") -> "ObservationSet":
        if other.x_known != self.x_known:
            raise DomainError("cannot mix trusted-view and hidden-view samples")
        return ObservationSet(
            np.concatenate([self.z, other.z]), np.concatenate([self.x, other.x]), self.x_known
        )


def _check_nonneg(name: str, value: NDArray) -> None:
    if np.any(np.isnan(value)) or np.any(value < 0):
        raise DomainError(f"{name} must be >= 0")


def _check_pos(name: str, value: NDArray) -> None:
    if np.any(np.isnan(value)) or np.any(value <= 0):
        raise DomainError(f"{name} must be > 0")


def log_bessel_i0(a: ArrayLike) -> NDArray[np.float64] | float:
    """Natural log of the modified Bessel function ``I0(a)`` for ``a >= 0``.

    Uses ``log(i0e(a)) + a``; ``i0e`` never overflows, so the result is
    finite for any finite argument and follows ``a - log(2 pi a)/2`` for
    large ``a``.
    """
    a = np.asarray(a, dtype=float)
    _check_nonneg("a", a)
    out = np.log(i0e(a)) + a
    return out if out.ndim else float(out)


def bessel_ratio_i1_i0(a: ArrayLike) -> NDArray[np.float64] | float:
    """``I1(a) / I0(a)``: zero at the origin, increasing toward one."""
    a = np.asarray(a, dtype=float)
    _check_nonneg("a", a)
    out = i1e(a) / i0e(a)
    return out if out.ndim else float(out)


def bessel_ratio_over_arg(a: ArrayLike) -> NDArray[np.float64]:
    """``I1(a) / (a I0(a))`` with its limit 1/2 at ``a = 0``."""
    a = np.asarray(a, dtype=float)
    small = a < 1e-6
    safe = np.where(small, 1.0, a)
    return np.where(small, 0.5 - a * a / 16.0, i1e(safe) / (i0e(safe) * safe))


def _log_pdf(z: NDArray, a: NDArray, sigma2: float | NDArray) -> NDArray:
    """Unchecked log-density with ``a = h * x``."""
    arg = np.sqrt(z * a) / sigma2
    return np.log(i0e(arg)) + arg - np.log(2.0 * sigma2) - (z + a) / (2.0 * sigma2)


def log_pdf_received_power(
    z: ArrayLike, h: ArrayLike, x: ArrayLike, params: ChannelParams
) -> NDArray[np.float64] | float:
    z = np.asarray(z, dtype=float)
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_nonneg("z", z)
    _check_pos("h", h)
    _check_pos("x", x)
    out = _log_pdf(z, h * x, params.sigma2)
    return out if out.ndim else float(out)


def pdf_received_power(
    z: ArrayLike, h: ArrayLike, x: ArrayLike, params: ChannelParams
) -> NDArray[np.float64] | float:
    """Density of the received power (1/mW); broadcasts over its arguments."""
    out = np.exp(log_pdf_received_power(z, h, x, params))
    return out if np.ndim(out) else float(out)


def log_likelihood(obs: ObservationSet, h: float, params: ChannelParams) -> float:
    """Sum of per-frame log-densities, evaluated at the recorded powers."""
    if len(obs) == 0:
        raise DomainError("observation set is empty")
    return float(np.sum(log_pdf_received_power(obs.z, h, obs.x, params)))


def sample_received_power(
    h: ArrayLike,
    x: ArrayLike,
    params: ChannelParams,
    rng: np.random.Generator,
    size: int | tuple[int, ...] | None = None,
) -> NDArray[np.float64] | float:
    """Draw ``z = (sqrt(h x) + n1)^2 + n2^2`` with ``n1, n2 ~ N(0, sigma2)``.

    The in-phase component carries the deterministic amplitude ``sqrt(h x)``;
    the sum of squares is then noncentral chi-square with noncentrality
    ``h x / sigma2`` scaled by ``sigma2``, whose density is the model above.
    """
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_pos("h", h)
    _check_pos("x", x)
    if size is None:
        size = np.broadcast_shapes(h.shape, x.shape)
    sd = np.sqrt(params.sigma2)
    n1 = rng.normal(0.0, sd, size)
    n2 = rng.normal(0.0, sd, size)
    z = (np.sqrt(h * x) + n1) ** 2 + n2**2
    return z if np.ndim(z) else float(z)


def gain_from_distance(d: ArrayLike, params: ChannelParams) -> NDArray[np.float64] | float:
    d = np.asarray(d, dtype=float)
    _check_pos("d", d)
    out = params.path_loss_ref_gain * (params.ref_distance / d) ** params.path_loss_exponent
    return out if out.ndim else float(out)


def distance_from_gain(h: ArrayLike, params: ChannelParams) -> NDArray[np.float64] | float:
    h = np.asarray(h, dtype=float)
    _check_pos("h", h)
    out = params.ref_distance * (params.path_loss_ref_gain / h) ** (1.0 / params.path_loss_exponent)
    return out if out.ndim else float(out)


def sigma2_for_snr(snr_db: float, h: float, mean_power: float) -> float:
    """Noise variance giving average SNR ``h * mean_power / (2 sigma2)``."""
    if h <= 0 or mean_power <= 0:
        raise DomainError("h and mean_power must be > 0")
    return h * mean_power / (2.0 * 10.0 ** (snr_db / 10.0))


def dbm_to_mw(dbm: ArrayLike) -> NDArray[np.float64] | float:
    out = 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)
    return out if out.ndim else float(out)


def mw_to_dbm(mw: ArrayLike) -> NDArray[np.float64] | float:
    mw = np.asarray(mw, dtype=float)
    _check_pos("power", mw)
    out = 10.0 * np.log10(mw)
    return out if out.ndim else float(out)
