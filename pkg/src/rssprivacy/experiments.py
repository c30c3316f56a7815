"""Monte Carlo harness comparing trusted and un-trusted ranging accuracy.

Every grid cell is ``(policy, snr_db, m)``.  Each trial draws ``m`` powers,
one shared set of received powers, and runs both estimators on it.  Trial
generators are seeded from ``(seed, policy, snr, m, trial)`` alone, so cells
are independent of grid order, of which other cells exist and of the worker
count.

SNR is ``h mu / (2 sigma2)``.  By default the gain is fixed by
``true_distance`` and the noise follows the SNR; ``snr_mode="gain"`` fixes
the noise instead and moves the node.  The normalized error is the same
either way up to solver tolerance.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np
from numpy.typing import NDArray

from . import __version__
from .crlb import CrlbRow, crlb_curve
from .estimation import (
    OK,
    BracketMiss,
    EstimatorConfig,
    _argmax_h,
    block_search,
    normalized_error_std,
    split_blocks,
)
from .power_policy import (
    EXPONENTIAL,
    NORMAL,
    POLICY_KINDS,
    UNIFORM,
    PowerDistribution,
    PowerLevelSet,
    make_policy,
    sample_power,
)
from .signal_model import (
    ChannelParams,
    dbm_to_mw,
    distance_from_gain,
    gain_from_distance,
    sample_received_power,
    sigma2_for_snr,
)

log = logging.getLogger(__name__)

POLICY_IDS = {UNIFORM: 0, NORMAL: 1, EXPONENTIAL: 2}
NODE_TYPES = ("trusted", "untrusted")
# "noise": gain fixed by true_distance, sigma2 set per SNR.
# "gain": sigma2 fixed by noise_sigma2_mw, gain (hence distance) set per SNR.
SNR_MODES = ("noise", "gain")


class ExclusionRateExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    levels_mw: tuple[float, ...] = tuple(float(v) for v in dbm_to_mw([-10.0, -6.0, -3.0, 0.0]))
    mu_mw: float = float(dbm_to_mw(-3.0))
    policies: tuple[str, ...] = POLICY_KINDS
    true_distance: float = 1.0
    snr_db_list: tuple[float, ...] = (16.0, 9.0, 6.5)
    m_values: tuple[int, ...] = tuple(range(4, 41, 4))
    trials: int = 1000
    seed: int = 0
    estimator: EstimatorConfig = EstimatorConfig()
    path_loss_ref_gain: float = 1e-2
    path_loss_exponent: float = 2.0
    ref_distance: float = 1.0
    normal_spread_mw: float | None = None
    max_exclusion_rate: float = 0.01
    snr_mode: str = "noise"
    noise_sigma2_mw: float | None = None
    # CRLB sweep
    crlb_policies: tuple[str, ...] = (EXPONENTIAL, NORMAL)
    crlb_snr_db: float = 16.0
    crlb_trials: int = 30
    mc_samples: int = 20_000

    def __post_init__(self) -> None:
        if self.trials < 2:
            raise ValueError("trials must be >= 2")
        for p in self.policies + self.crlb_policies:
            if p not in POLICY_KINDS:
                raise ValueError(f"unknown policy {p!r}")
        if not self.m_values or min(self.m_values) < 1:
            raise ValueError("m_values must be positive")
        if not self.true_distance > 0:
            raise ValueError("true_distance must be > 0")
        if self.snr_mode not in SNR_MODES:
            raise ValueError(f"snr_mode must be one of {SNR_MODES}")
        if self.snr_mode == "gain" and not (self.noise_sigma2_mw or 0) > 0:
            raise ValueError("snr_mode 'gain' needs noise_sigma2_mw > 0")
        self.level_set.check_mean(self.mu_mw)

    @property
    def level_set(self) -> PowerLevelSet:
        return PowerLevelSet(np.asarray(self.levels_mw))

    @property
    def true_gain(self) -> float:
        return float(gain_from_distance(self.true_distance, self.channel(1.0)))

    def channel(self, sigma2: float) -> ChannelParams:
        return ChannelParams(sigma2, self.path_loss_ref_gain, self.path_loss_exponent, self.ref_distance)

    def cell_gain(self, snr_db: float) -> float:
        if self.snr_mode == "noise":
            return self.true_gain
        return float(2.0 * self.noise_sigma2_mw * 10.0 ** (snr_db / 10.0) / self.mu_mw)

    def cell_distance(self, snr_db: float) -> float:
        if self.snr_mode == "noise":
            return self.true_distance
        return float(distance_from_gain(self.cell_gain(snr_db), self.channel(1.0)))

    def channel_for_snr(self, snr_db: float) -> ChannelParams:
        if self.snr_mode == "gain":
            return self.channel(self.noise_sigma2_mw)
        return self.channel(sigma2_for_snr(snr_db, self.true_gain, self.mu_mw))

    def policy(self, kind: str) -> PowerDistribution:
        return make_policy(kind, self.level_set, self.mu_mw, self.normal_spread_mw)

    def bracket(self, snr_db: float) -> tuple[float, float]:
        if self.estimator.h_bracket is not None:
            return self.estimator.h_bracket
        f = self.estimator.bracket_factor
        h = self.cell_gain(snr_db)
        return h / f, h * f

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimator"] = asdict(self.estimator)
        return d


@dataclass(frozen=True)
class ReportRow:
    policy: str
    node_type: str
    snr_db: float
    m: int
    normalized_std: float
    trials: int
    excluded: int
    seed: int


@dataclass
class ExperimentReport:
    rows: list[ReportRow]
    config: ExperimentConfig
    provenance: dict = field(default_factory=dict)

    def select(self, **kw) -> list[ReportRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]

    def curve(self, policy: str, node_type: str, snr_db: float) -> tuple[NDArray, NDArray]:
        sel = sorted(self.select(policy=policy, node_type=node_type, snr_db=snr_db), key=lambda r: r.m)
        return np.array([r.m for r in sel]), np.array([r.normalized_std for r in sel])


def snr_key(snr_db: float) -> int:
    """Integer seed component for an SNR value (milli-dB resolution)."""
    return int(round(snr_db * 1000)) & 0xFFFFFFFF


def trial_rng(seed: int, policy: str, snr_db: float, m: int, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, POLICY_IDS[policy], snr_key(snr_db), m, trial])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class CellResult:
    d_trusted: NDArray
    d_untrusted: NDArray
    h_trusted: NDArray
    h_untrusted: NDArray
    valid: NDArray
    sequences_evaluated: int

    @property
    def excluded(self) -> int:
        return int(np.count_nonzero(~self.valid))


def _draw_trials(policy: PowerDistribution, h: float, params: ChannelParams, m: int, rngs) -> tuple[NDArray, NDArray]:
    z = np.empty((len(rngs), m))
    x = np.empty((len(rngs), m))
    for i, rng in enumerate(rngs):
        _, x[i] = sample_power(policy, rng, m)
        z[i] = sample_received_power(h, x[i], params, rng)
    return z, x


def _estimate_pairs(
    z: NDArray, x: NDArray, levels: PowerLevelSet, params: ChannelParams, est: EstimatorConfig, bracket
) -> CellResult:
    """Both estimators on each row of ``(z, x)``; rows are trials."""
    n_trials, m = z.shape
    lo, hi = bracket
    tol = est.h_tolerance
    h_t, _, st_t = _argmax_h(z, x, params.sigma2, lo, hi, tol)

    blocks = split_blocks(m, est.block_size, est.remainder_policy)
    full = [b for b in blocks if b.stop - b.start == est.block_size]
    tail = [b for b in blocks if b.stop - b.start != est.block_size]
    block_h = np.empty((n_trials, len(blocks)))
    ok_u = np.ones(n_trials, dtype=bool)
    evaluated = 0
    col = 0
    for group in (full, tail):
        if not group:
            continue
        width = group[0].stop - group[0].start
        zb = np.stack([z[:, b] for b in group], axis=1).reshape(-1, width)
        hb, _, sb = block_search(zb, levels.levels, params.sigma2, lo, hi, tol)
        block_h[:, col : col + len(group)] = hb.reshape(n_trials, len(group))
        ok_u &= np.all(sb.reshape(n_trials, len(group)) == OK, axis=1)
        evaluated += len(group) * levels.n**width
        col += len(group)
    h_u = block_h.mean(axis=1)
    valid = (st_t == OK) & ok_u
    return CellResult(
        distance_from_gain(h_t, params),
        distance_from_gain(h_u, params),
        h_t,
        h_u,
        valid,
        evaluated,
    )


def run_trial(
    policy: PowerDistribution, snr_db: float, m: int, cfg: ExperimentConfig, rng: np.random.Generator
) -> tuple[float, float]:
    """One paired trial; returns the trusted and un-trusted distance estimates.

    Raises
    ------
    BracketMiss
        If either estimator's maximum lands on the gain bracket.
    """
    params = cfg.channel_for_snr(snr_db)
    z, x = _draw_trials(policy, cfg.cell_gain(snr_db), params, m, [rng])
    res = _estimate_pairs(z, x, cfg.level_set, params, cfg.estimator, cfg.bracket(snr_db))
    if not res.valid[0]:
        raise BracketMiss("likelihood maximum on the gain bracket")
    return float(res.d_trusted[0]), float(res.d_untrusted[0])


def run_cell(cfg: ExperimentConfig, policy_kind: str, snr_db: float, m: int) -> CellResult:
    policy = cfg.policy(policy_kind)
    params = cfg.channel_for_snr(snr_db)
    rngs = [trial_rng(cfg.seed, policy_kind, snr_db, m, t) for t in range(cfg.trials)]
    z, x = _draw_trials(policy, cfg.cell_gain(snr_db), params, m, rngs)
    return _estimate_pairs(z, x, cfg.level_set, params, cfg.estimator, cfg.bracket(snr_db))


def _cell_rows(cfg: ExperimentConfig, policy_kind: str, snr_db: float, m: int) -> list[ReportRow]:
    res = run_cell(cfg, policy_kind, snr_db, m)
    if res.excluded > cfg.max_exclusion_rate * cfg.trials:
        raise ExclusionRateExceeded(
            f"{res.excluded}/{cfg.trials} trials hit the gain bracket in cell "
            f"({policy_kind}, {snr_db} dB, m={m})"
        )
    rows = []
    for node, d in (("trusted", res.d_trusted), ("untrusted", res.d_untrusted)):
        nstd = normalized_error_std(d[res.valid], cfg.cell_distance(snr_db))
        rows.append(ReportRow(policy_kind, node, float(snr_db), int(m), nstd, int(res.valid.sum()), res.excluded, cfg.seed))
    log.debug("cell %s %s dB m=%d done (%d excluded)", policy_kind, snr_db, m, res.excluded)
    return rows


def _cells(cfg: ExperimentConfig) -> list[tuple[str, float, int]]:
    return [(p, s, m) for p in cfg.policies for s in cfg.snr_db_list for m in cfg.m_values]


def _row_key(r: ReportRow):
    return (r.policy, r.node_type, r.snr_db, r.m)


def run_monte_carlo(config: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    """Sweep the full grid; rows sorted by (policy, node_type, snr_db, m)."""
    cells = _cells(config)
    rows: list[ReportRow] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_cell_rows, config, *c) for c in cells]
            for f in futures:
                rows.extend(f.result())
    else:
        for c in cells:
            rows.extend(_cell_rows(config, *c))
    rows.sort(key=_row_key)
    return ExperimentReport(rows, config, {"version": __version__, "config": config.to_dict()})


def accuracy_ratio(
    rows: Iterable[ReportRow] | ExperimentReport, policy: str = EXPONENTIAL
) -> dict[float, tuple[float, float, float]]:
    """Per-SNR (min, mean, max) over ``m`` of un-trusted / trusted normalized std."""
    if isinstance(rows, ExperimentReport):
        rows = rows.rows
    by_key = {}
    for r in rows:
        if r.policy == policy:
            by_key[(r.snr_db, r.m, r.node_type)] = r.normalized_std
    nodes = {k[2] for k in by_key}
    for node in NODE_TYPES:
        if node not in nodes:
            raise ValueError(f"missing node type {node!r} for policy {policy!r}")
    out: dict[float, tuple[float, float, float]] = {}
    for snr in sorted({k[0] for k in by_key}, reverse=True):
        ms = sorted({k[1] for k in by_key if k[0] == snr})
        ratios = []
        for m in ms:
            t, u = by_key.get((snr, m, "trusted")), by_key.get((snr, m, "untrusted"))
            if t is None or u is None:
                raise ValueError(f"missing node type at snr={snr}, m={m}")
            ratios.append(u / t if t > 0 else float("inf"))
        r = np.asarray(ratios)
        out[snr] = (float(r.min()), float(r.mean()), float(r.max()))
    return out


def crlb_experiment(config: ExperimentConfig) -> list[CrlbRow]:
    h = config.cell_gain(config.crlb_snr_db)
    sigma2 = config.channel_for_snr(config.crlb_snr_db).sigma2
    rows: list[CrlbRow] = []
    # Common random numbers: every policy sees the same uniforms (mapped
    # through its own inverse CDF) and the same noise draws, so curve
    # differences reflect the policies rather than independent sampling.
    for kind in config.crlb_policies:
        rows.extend(
            crlb_curve(config.policy(kind), h, sigma2, config.m_values, config.crlb_trials, config.seed, config.mc_samples)
        )
    rows.sort(key=lambda r: (r.view, r.policy, r.m))
    return rows


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw)
