"""Maximum-likelihood ranging for trusted and un-trusted receivers.

A trusted receiver knows every frame's transmit power and only has to find
the channel gain ``h``.  An un-trusted receiver must also guess the powers:
it splits the frames into blocks of ``s``, tries every one of the ``n**s``
level sequences on each block, keeps the best (sequence, h) pair, and
averages the per-block gains.

The per-frame log-likelihood is concave in ``h`` (``log I0(c sqrt(h))`` is
concave and the remaining term is linear), so for a fixed power sequence the
score has a single root.  The batched solver below exploits that with a
bracketed Newton iteration; :func:`maximize_over_h` also offers the slower
grid plus golden-section route.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import i0e, i1e

from .power_policy import PowerLevelSet
from .signal_model import ChannelParams, DomainError, ObservationSet, _log_pdf, distance_from_gain

GRID_POINTS = 64
TIE_RTOL = 1e-9
# Cap on elements per batched array; bounds peak memory in the block search.
_CHUNK_ELEMENTS = 1 << 21

OK, AT_LOWER, AT_UPPER = 0, -1, 1


class BracketMiss(RuntimeError):
    """The likelihood maximum sits on an endpoint of the gain bracket."""


class EmptyBlocks(ValueError):
    """Dropping the remainder frames left no complete block."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings shared by both estimators.

    ``h_bracket=None`` centers a bracket spanning ``bracket_factor`` either
    way on a moment estimate of the gain.
    """

    block_size: int = 4
    h_bracket: tuple[float, float] | None = None
    h_tolerance: float = 1e-8
    remainder_policy: Literal["drop", "shrink"] = "drop"
    bracket_factor: float = 1e3

    def __post_init__(self) -> None:
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.h_bracket is not None:
            lo, hi = self.h_bracket
            if not 0 < lo < hi:
                raise ValueError("h_bracket must satisfy 0 < h_min < h_max")
        if not self.h_tolerance > 0:
            raise ValueError("h_tolerance must be > 0")
        if self.remainder_policy not in ("drop", "shrink"):
            raise ValueError("remainder_policy must be 'drop' or 'shrink'")
        if not self.bracket_factor > 1:
            raise ValueError("bracket_factor must be > 1")


@dataclass(frozen=True)
class EstimationResult:
    h_hat: float
    d_hat: float
    per_block_h: tuple[float, ...] = ()
    per_block_sequences: tuple[tuple[int, ...], ...] = ()
    sequences_evaluated: int = 0
    log_likelihood: float = float("nan")
    extra: dict = field(default_factory=dict, compare=False)


def _score_and_curvature(z: NDArray, x: NDArray, h: NDArray, sigma2: float) -> tuple[NDArray, NDArray]:
    """First and second h-derivatives of the summed log-likelihood.

    With ``a = h x`` and ``t = sqrt(z a)/sigma2`` the per-frame derivatives
    in ``a`` are ``-1/(2 s2) + q z/(2 s2^2)`` and
    ``z (1 - R^2 - 2 q) / (4 s2^2 a)``, where ``R = I1(t)/I0(t)`` and
    ``q = R/t``.
    """
    a = h[..., None] * x
    t = np.sqrt(z * a) / sigma2
    small = t < 1e-6
    tt = np.where(small, 1.0, t)
    r = i1e(tt) / i0e(tt)
    q = np.where(small, 0.5 - t * t / 16.0, r / tt)
    r = np.where(small, 0.5 * t, r)
    s4 = sigma2 * sigma2
    d1 = -0.5 / sigma2 + q * z / (2.0 * s4)
    d2 = z * (1.0 - r * r - 2.0 * q) / (4.0 * s4 * a)
    return np.sum(x * d1, axis=-1), np.sum(x * x * d2, axis=-1)


def _newton_argmax(
    z: NDArray, x: NDArray, sigma2: float, lo: NDArray, hi: NDArray, tol: float, max_iter: int = 200
) -> tuple[NDArray, NDArray]:
    """Bracketed Newton on the score for rows of ``(z, x)``; 2-D inputs.

    Returns the maximizing gain per row and a status code (``AT_LOWER`` or
    ``AT_UPPER`` when the constrained maximum is an endpoint).
    """
    n = z.shape[0]
    lo = np.broadcast_to(lo, (n,)).astype(float)
    hi = np.broadcast_to(hi, (n,)).astype(float)
    h = np.empty(n)
    status = np.zeros(n, dtype=np.int8)

    s_lo, _ = _score_and_curvature(z, x, lo, sigma2)
    s_hi, _ = _score_and_curvature(z, x, hi, sigma2)
    low_mask = s_lo <= 0
    high_mask = (s_hi >= 0) & ~low_mask
    h[low_mask] = lo[low_mask]
    h[high_mask] = hi[high_mask]
    status[low_mask] = AT_LOWER
    status[high_mask] = AT_UPPER

    act = np.flatnonzero(~(low_mask | high_mask))
    za, xa = z[act], x[act]
    blo, bhi = lo[act].copy(), hi[act].copy()
    # Method-of-moments start: E[z] = h x + 2 sigma2.
    hc = np.sum(xa * (za - 2.0 * sigma2), axis=-1) / np.sum(xa * xa, axis=-1)
    hc = np.where((hc > blo) & (hc < bhi), hc, np.sqrt(blo * bhi))

    for _ in range(max_iter):
        if act.size == 0:
            break
        s, c = _score_and_curvature(za, xa, hc, sigma2)
        pos = s > 0
        blo = np.where(pos, hc, blo)
        bhi = np.where(pos, bhi, hc)
        with np.errstate(divide="ignore", invalid="ignore"):
            hn = hc - s / c
        bad = ~((hn > blo) & (hn < bhi)) | ~(c < 0)
        hn = np.where(bad, np.sqrt(blo * bhi), hn)
        done = (np.abs(hn - hc) <= tol * hc) | (s == 0) | (bhi - blo <= tol * blo)
        h[act[done]] = hn[done]
        keep = ~done
        act, za, xa = act[keep], za[keep], xa[keep]
        blo, bhi, hc = blo[keep], bhi[keep], hn[keep]
    else:
        h[act] = hc
    return h, status


def _golden_argmax(
    z: NDArray, x: NDArray, sigma2: float, lo: NDArray, hi: NDArray, tol: float
) -> tuple[NDArray, NDArray]:
    """Log-spaced grid scan followed by golden-section search in ``log h``."""
    n = z.shape[0]
    llo = np.log(np.broadcast_to(lo, (n,)).astype(float))
    lhi = np.log(np.broadcast_to(hi, (n,)).astype(float))
    frac = np.linspace(0.0, 1.0, GRID_POINTS)
    grid = llo[:, None] + (lhi - llo)[:, None] * frac  # (n, G)

    def ll(u: NDArray) -> NDArray:
        a = np.exp(u)[..., None] * x[:, None, :] if u.ndim == 2 else np.exp(u)[:, None] * x
        zz = z[:, None, :] if u.ndim == 2 else z
        return np.sum(_log_pdf(zz, a, sigma2), axis=-1)

    vals = ll(grid)
    j = np.argmax(vals, axis=1)
    rows = np.arange(n)
    a = grid[rows, np.maximum(j - 1, 0)]
    b = grid[rows, np.minimum(j + 1, GRID_POINTS - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = ll(c), ll(d)
    while np.any(b - a > tol):
        # max in [a, d] keeps c as the new interior right point, else mirror
        left = fc >= fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        p = np.where(left, b - invphi * (b - a), a + invphi * (b - a))
        fp = ll(p)
        c, d = np.where(left, p, d), np.where(left, c, p)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    u = 0.5 * (a + b)
    status = np.zeros(n, dtype=np.int8)
    status[u - llo <= tol] = AT_LOWER
    status[lhi - u <= tol] = AT_UPPER
    return np.exp(u), status


def _argmax_h(
    z: NDArray, x: NDArray, sigma2: float, lo, hi, tol: float, method: str = "newton"
) -> tuple[NDArray, NDArray, NDArray]:
    """Batched gain maximization over the last axis; returns (h, loglik, status)."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(z.shape, x.shape)
    z2 = np.broadcast_to(z, shape).reshape(-1, shape[-1])
    x2 = np.broadcast_to(x, shape).reshape(-1, shape[-1])
    lo = np.broadcast_to(np.asarray(lo, dtype=float), shape[:-1]).reshape(-1)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), shape[:-1]).reshape(-1)
    if method == "newton":
        h, status = _newton_argmax(z2, x2, sigma2, lo, hi, tol)
    elif method == "golden":
        h, status = _golden_argmax(z2, x2, sigma2, lo, hi, tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    ll = np.sum(_log_pdf(z2, h[:, None] * x2, sigma2), axis=-1)
    out_shape = shape[:-1]
    return h.reshape(out_shape), ll.reshape(out_shape), status.reshape(out_shape)


def _resolve_bracket(cfg: EstimatorConfig, h_guess: float) -> tuple[float, float]:
    if cfg.h_bracket is not None:
        return cfg.h_bracket
    h_guess = max(h_guess, np.finfo(float).tiny * cfg.bracket_factor)
    return h_guess / cfg.bracket_factor, h_guess * cfg.bracket_factor


def _raise_on_miss(status: int, lo: float, hi: float) -> None:
    if status == AT_LOWER:
        raise BracketMiss(f"likelihood maximum at lower gain bound {lo!r}")
    if status == AT_UPPER:
        raise BracketMiss(f"likelihood maximum at upper gain bound {hi!r}")


def maximize_over_h(
    obs: ObservationSet,
    params: ChannelParams,
    bracket: tuple[float, float],
    tol: float = 1e-8,
    method: Literal["newton", "golden"] = "newton",
) -> float:
    """Gain maximizing the likelihood of ``obs`` at its recorded powers.

    ``method="golden"`` scans 64 log-spaced gains and refines the best cell
    by golden-section search; ``"newton"`` runs a bracketed Newton iteration
    on the score.  Both stop at relative tolerance ``tol``.

    Raises
    ------
    BracketMiss
        If the maximum is on a bracket endpoint.
    """
    if len(obs) == 0:
        raise DomainError("observation set is empty")
    lo, hi = bracket
    if not 0 < lo < hi:
        raise DomainError("bracket must satisfy 0 < lo < hi")
    h, _, status = _argmax_h(obs.z, obs.x, params.sigma2, lo, hi, tol, method)
    _raise_on_miss(int(status), lo, hi)
    return float(h)


def estimate_trusted(
    obs: ObservationSet, params: ChannelParams, cfg: EstimatorConfig = EstimatorConfig()
) -> EstimationResult:
    if not obs.x_known:
        raise DomainError("trusted estimation needs the transmit powers")
    guess = max(float(np.sum(obs.x * (obs.z - 2 * params.sigma2)) / np.sum(obs.x**2)), 0.0)
    if guess == 0.0:
        guess = float(np.mean(obs.z) / np.mean(obs.x))
    lo, hi = _resolve_bracket(cfg, guess)
    h, ll, status = _argmax_h(obs.z, obs.x, params.sigma2, lo, hi, cfg.h_tolerance)
    _raise_on_miss(int(status), lo, hi)
    h = float(h)
    return EstimationResult(h, float(distance_from_gain(h, params)), log_likelihood=float(ll))


def candidate_sequences(n: int, s: int) -> NDArray[np.intp]:
    """All ``n**s`` level-index sequences in lexicographic order."""
    return np.array(list(itertools.product(range(n), repeat=s)), dtype=np.intp).reshape(n**s, s)


def split_blocks(m: int, s: int, remainder_policy: str) -> list[slice]:
    blocks = [slice(i, i + s) for i in range(0, m - s + 1, s)]
    rem = m % s
    if rem and remainder_policy == "shrink":
        blocks.append(slice(m - rem, m))
    if not blocks:
        raise EmptyBlocks(f"{m} frames give no complete block of size {s}")
    return blocks


def block_search(
    z_blocks: NDArray,
    levels: NDArray,
    sigma2: float,
    lo,
    hi,
    tol: float,
) -> tuple[NDArray, NDArray, NDArray]:
    """Exhaustive sequence search on equal-length blocks (rows of ``z_blocks``).

    For every block and every candidate sequence the gain is maximized; the
    winner is the candidate with the largest block log-likelihood.  Scores
    within a relative ``TIE_RTOL`` count as tied (sequences that are scaled
    copies of each other tie exactly) and go to the lexicographically
    smallest candidate.

    Returns per-block winning gain, winning candidate index and status.
    """
    z_blocks = np.atleast_2d(np.asarray(z_blocks, dtype=float))
    nb, s = z_blocks.shape
    cands = candidate_sequences(levels.size, s)
    xc = levels[cands]  # (C, s)
    ncand = cands.shape[0]
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (nb,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (nb,))

    h_win = np.empty(nb)
    idx_win = np.empty(nb, dtype=np.intp)
    st_win = np.empty(nb, dtype=np.int8)
    step = max(1, _CHUNK_ELEMENTS // (ncand * s))
    for start in range(0, nb, step):
        sl = slice(start, min(nb, start + step))
        zc = z_blocks[sl, None, :]
        h, ll, status = _argmax_h(zc, xc[None], sigma2, lo[sl, None], hi[sl, None], tol)
        best = ll.max(axis=1, keepdims=True)
        tied = ll >= best - TIE_RTOL * np.maximum(1.0, np.abs(best))
        j = np.argmax(tied, axis=1)
        rows = np.arange(j.size)
        h_win[sl] = h[rows, j]
        idx_win[sl] = j
        st_win[sl] = status[rows, j]
    return h_win, idx_win, st_win


def estimate_untrusted(
    obs: ObservationSet,
    levels: PowerLevelSet,
    params: ChannelParams,
    cfg: EstimatorConfig = EstimatorConfig(),
) -> EstimationResult:
    """Block-wise exhaustive ML over hidden power sequences.

    The transmit powers stored in ``obs`` are ignored.
    """
    m, s = len(obs), cfg.block_size
    if m == 0:
        raise DomainError("observation set is empty")
    blocks = split_blocks(m, s, cfg.remainder_policy)
    guess = float(np.mean(obs.z) / np.mean(levels.levels))
    lo, hi = _resolve_bracket(cfg, guess)
    per_h: list[float] = []
    per_seq: list[tuple[int, ...]] = []
    evaluated = 0
    # Full blocks are searched together; a shrunk tail block separately.
    full = [b for b in blocks if b.stop - b.start == s]
    groups = [full] + [[b] for b in blocks if b.stop - b.start != s]
    results = {}
    for group in groups:
        if not group:
            continue
        zb = np.stack([obs.z[b] for b in group])
        h, j, st = block_search(zb, levels.levels, params.sigma2, lo, hi, cfg.h_tolerance)
        width = zb.shape[1]
        cands = candidate_sequences(levels.n, width)
        for b, hb, jb, sb in zip(group, h, j, st):
            _raise_on_miss(int(sb), lo, hi)
            results[b.start] = (float(hb), tuple(int(v) for v in cands[jb]))
        evaluated += len(group) * levels.n**width
    for b in blocks:
        hb, seq = results[b.start]
        per_h.append(hb)
        per_seq.append(seq)
    h_hat = float(np.mean(per_h))
    return EstimationResult(
        h_hat,
        float(distance_from_gain(h_hat, params)),
        per_block_h=tuple(per_h),
        per_block_sequences=tuple(per_seq),
        sequences_evaluated=evaluated,
    )


def normalized_error_std(estimates: Sequence[float] | NDArray, true_d: float) -> float:
    """Sample standard deviation (N-1) of the distance error over ``true_d``."""
    est = np.asarray(estimates, dtype=float)
    if est.size < 2:
        raise ValueError("need at least two estimates")
    if not true_d > 0:
        raise ValueError("true distance must be > 0")
    return float(np.std(est - true_d, ddof=1) / true_d)
