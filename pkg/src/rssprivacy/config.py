"""INI-style experiment configuration.

Sections and keys (all optional)::

    [experiment]
    levels_dbm = -10, -6, -3, 0      ; or levels_mw
    mu_dbm = -3                      ; or mu_mw
    policies = uniform, discretized_normal, discretized_exponential
    true_distance = 1.0
    snr_db = 16, 9, 6.5
    m_values = 4, 8, 12              ; or a range "4:40:4" (inclusive)
    trials = 1000
    seed = 7
    normal_spread_mw = 0.225
    max_exclusion_rate = 0.01
    snr_mode = noise                 ; or "gain" with noise_sigma2_mw
    noise_sigma2_mw = 1e-4

    [estimator]
    block_size = 4
    h_min = ...                      ; with h_max, a fixed gain bracket
    h_max = ...
    h_tolerance = 1e-8
    remainder_policy = drop
    bracket_factor = 1000

    [channel]
    path_loss_ref_gain = 0.01
    path_loss_exponent = 2
    ref_distance = 1

    [crlb]
    policies = discretized_exponential, discretized_normal
    snr_db = 16
    trials = 30
    mc_samples = 20000

Unknown sections or keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import configparser
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable

from .experiments import ExperimentConfig
from .signal_model import dbm_to_mw


class ConfigError(ValueError):
    pass


def parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def parse_ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError("range must be start:stop:step with step > 0")
        start, stop, step = parts
        return tuple(range(start, stop + 1, step))
    return tuple(int(v) for v in text.split(",") if v.strip())


def parse_words(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


_SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "experiment": {
        "levels_dbm": parse_floats,
        "levels_mw": parse_floats,
        "mu_dbm": float,
        "mu_mw": float,
        "policies": parse_words,
        "true_distance": float,
        "snr_db": parse_floats,
        "m_values": parse_ints,
        "trials": int,
        "seed": int,
        "normal_spread_mw": float,
        "max_exclusion_rate": float,
        "snr_mode": str.strip,
        "noise_sigma2_mw": float,
    },
    "estimator": {
        "block_size": int,
        "h_min": float,
        "h_max": float,
        "h_tolerance": float,
        "remainder_policy": str.strip,
        "bracket_factor": float,
    },
    "channel": {
        "path_loss_ref_gain": float,
        "path_loss_exponent": float,
        "ref_distance": float,
    },
    "crlb": {
        "policies": parse_words,
        "snr_db": float,
        "trials": int,
        "mc_samples": int,
    },
}


def read_sections(path: str | Path) -> dict[str, dict[str, Any]]:
    """Parse and type-check a config file into ``{section: {key: value}}``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                out[section][key] = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from exc
    return out


def build_config(sections: dict[str, dict[str, Any]], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply typed sections on top of ``base`` (defaults when omitted)."""
    for section, keys in sections.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in keys:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    cfg = base or ExperimentConfig()
    exp = sections.get("experiment", {})
    est = sections.get("estimator", {})
    ch = sections.get("channel", {})
    cr = sections.get("crlb", {})
    if "levels_dbm" in exp and "levels_mw" in exp:
        raise ConfigError("give levels_dbm or levels_mw, not both")
    if "mu_dbm" in exp and "mu_mw" in exp:
        raise ConfigError("give mu_dbm or mu_mw, not both")

    kw: dict[str, Any] = {}
    if "levels_dbm" in exp:
        kw["levels_mw"] = tuple(float(v) for v in dbm_to_mw(list(exp["levels_dbm"])))
    if "levels_mw" in exp:
        kw["levels_mw"] = tuple(exp["levels_mw"])
    if "mu_dbm" in exp:
        kw["mu_mw"] = float(dbm_to_mw(exp["mu_dbm"]))
    if "mu_mw" in exp:
        kw["mu_mw"] = exp["mu_mw"]
    rename = {"snr_db": "snr_db_list"}
    for key in (
        "policies",
        "true_distance",
        "snr_db",
        "m_values",
        "trials",
        "seed",
        "normal_spread_mw",
        "max_exclusion_rate",
        "snr_mode",
        "noise_sigma2_mw",
    ):
        if key in exp:
            kw[rename.get(key, key)] = exp[key]
    kw.update(ch)
    for key, field_name in (("policies", "crlb_policies"), ("snr_db", "crlb_snr_db"), ("trials", "crlb_trials"), ("mc_samples", "mc_samples")):
        if key in cr:
            kw[field_name] = cr[key]

    est_kw = {k: v for k, v in est.items() if k not in ("h_min", "h_max")}
    if ("h_min" in est) != ("h_max" in est):
        raise ConfigError("h_min and h_max must be given together")
    if "h_min" in est:
        est_kw["h_bracket"] = (est["h_min"], est["h_max"])
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in kw.items()}
    try:
        if est_kw:
            kw["estimator"] = replace(cfg.estimator, **est_kw)
        return replace(cfg, **kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_sections(cfg: ExperimentConfig) -> dict[str, dict[str, Any]]:
    """Fully materialized sections; ``build_config`` on the result round-trips."""
    est: dict[str, Any] = {
        "block_size": cfg.estimator.block_size,
        "h_tolerance": cfg.estimator.h_tolerance,
        "remainder_policy": cfg.estimator.remainder_policy,
        "bracket_factor": cfg.estimator.bracket_factor,
    }
    if cfg.estimator.h_bracket is not None:
        est["h_min"], est["h_max"] = cfg.estimator.h_bracket
    exp: dict[str, Any] = {
        "levels_mw": list(cfg.levels_mw),
        "mu_mw": cfg.mu_mw,
        "policies": list(cfg.policies),
        "true_distance": cfg.true_distance,
        "snr_db": list(cfg.snr_db_list),
        "m_values": list(cfg.m_values),
        "trials": cfg.trials,
        "seed": cfg.seed,
        "max_exclusion_rate": cfg.max_exclusion_rate,
        "snr_mode": cfg.snr_mode,
    }
    if cfg.normal_spread_mw is not None:
        exp["normal_spread_mw"] = cfg.normal_spread_mw
    if cfg.noise_sigma2_mw is not None:
        exp["noise_sigma2_mw"] = cfg.noise_sigma2_mw
    return {
        "experiment": exp,
        "estimator": est,
        "channel": {
            "path_loss_ref_gain": cfg.path_loss_ref_gain,
            "path_loss_exponent": cfg.path_loss_exponent,
            "ref_distance": cfg.ref_distance,
        },
        "crlb": {
            "policies": list(cfg.crlb_policies),
            "snr_db": cfg.crlb_snr_db,
            "trials": cfg.crlb_trials,
            "mc_samples": cfg.mc_samples,
        },
    }


def sections_from_json(data: dict[str, dict[str, Any]]) -> dict[str, dict[str, Any]]:
    """Restore tuple-typed values after a JSON round trip."""
    out: dict[str, dict[str, Any]] = {}
    for section, keys in data.items():
        out[section] = {k: tuple(v) if isinstance(v, list) else v for k, v in keys.items()}
    return out
