"""Command-line entry point: ``rssprivacy <subcommand>``.

Exit codes: 0 success, 1 usage or config error, 2 infeasible problem,
3 numerical failure at run time.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    build_config,
    config_to_sections,
    parse_floats,
    parse_ints,
    parse_words,
    read_sections,
    sections_from_json,
)
from .crlb import SingularFisher
from .estimation import BracketMiss, EmptyBlocks
from .experiments import (
    ExclusionRateExceeded,
    ExperimentConfig,
    ReportRow,
    accuracy_ratio,
    crlb_experiment,
    run_monte_carlo,
)
from .power_policy import InfeasibleMean, PowerLevelSet, entropy, mean_power, solve_max_entropy
from .signal_model import dbm_to_mw, mw_to_dbm

log = logging.getLogger("rssprivacy")

OUTPUT_DIR_ENV = "RSSPRIVACY_OUTPUT_DIR"
SIMULATE_COLUMNS = ("policy", "node_type", "snr_db", "m", "normalized_std", "trials", "excluded", "seed")
CRLB_COLUMNS = ("view", "policy", "m", "crlb_mean", "crlb_stderr", "trials", "seed")
RATIO_COLUMNS = ("snr_db", "min", "avg", "max")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _fmt(value: Any) -> str:
    # repr of a float is its shortest round-trip form and ignores locale
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _csv_text(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _output_path(args: argparse.Namespace, default_name: str) -> Path:
    if args.output:
        return Path(args.output)
    base = args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or "."
    return Path(base) / default_name


def _manifest_path(output: Path) -> Path:
    return output.with_name(output.stem + ".manifest.json")


def _write_manifest(output: Path, command: str, sections: dict, seed: int | None, extra: dict | None = None) -> Path:
    manifest = {
        "subcommand": command,
        "version": __version__,
        "seed": seed,
        "config": sections,
        "outputs": [str(output)],
    }
    if extra:
        manifest.update(extra)
    path = _manifest_path(output)
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_manifest(path: str, command: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("subcommand") != command:
        raise ConfigError(f"manifest {path} is for {manifest.get('subcommand')!r}, not {command!r}")
    return manifest


def _resolve_experiment(args: argparse.Namespace, command: str) -> ExperimentConfig:
    """Config precedence: defaults < manifest < config file < flags."""
    seed_given = False
    cfg = ExperimentConfig()
    if args.manifest:
        manifest = _load_manifest(args.manifest, command)
        cfg = build_config(sections_from_json(manifest["config"]), cfg)
        seed_given = manifest.get("seed") is not None
    if args.config:
        sections = read_sections(args.config)
        cfg = build_config(sections, cfg)
        seed_given = seed_given or "seed" in sections.get("experiment", {})
    overrides: dict[str, dict[str, Any]] = {"experiment": {}, "crlb": {}}
    exp = overrides["experiment"]
    if args.seed is not None:
        exp["seed"] = args.seed
        seed_given = True
    if not seed_given:
        raise UsageError("no seed: pass --seed or set [experiment] seed in the config")
    if getattr(args, "trials", None) is not None:
        exp["trials"] = args.trials
    if args.m_values:
        exp["m_values"] = parse_ints(args.m_values)
    if getattr(args, "snr_db", None):
        exp["snr_db"] = parse_floats(args.snr_db)
    if args.policies:
        key = "crlb" if command == "crlb" else "experiment"
        overrides[key]["policies"] = parse_words(args.policies)
    if command == "crlb":
        if args.crlb_trials is not None:
            overrides["crlb"]["trials"] = args.crlb_trials
        if args.mc_samples is not None:
            overrides["crlb"]["mc_samples"] = args.mc_samples
        if args.crlb_snr_db is not None:
            overrides["crlb"]["snr_db"] = args.crlb_snr_db
    return build_config({k: v for k, v in overrides.items() if v}, cfg)


def cmd_optimize_dist(args: argparse.Namespace) -> int:
    if (args.levels_dbm is None) == (args.levels_mw is None):
        raise UsageError("give exactly one of --levels-dbm / --levels-mw")
    if (args.mu_dbm is None) == (args.mu_mw is None):
        raise UsageError("give exactly one of --mu-dbm / --mu-mw")
    try:
        if args.levels_dbm is not None:
            levels = PowerLevelSet.from_dbm(parse_floats(args.levels_dbm))
        else:
            levels = PowerLevelSet(np.asarray(parse_floats(args.levels_mw)))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mu = float(dbm_to_mw(args.mu_dbm)) if args.mu_dbm is not None else float(args.mu_mw)
    dist = solve_max_entropy(levels, mu)

    rows = [[i, float(x), float(mw_to_dbm(x)), float(p)] for i, (x, p) in enumerate(zip(levels.levels, dist.probs))]
    text = _csv_text(("index", "level_mw", "level_dbm", "probability"), rows)
    summary = {
        "k": dist.params["k"],
        "alpha": float(dist.params["alpha"]),
        "entropy_nats": entropy(dist),
        "mean_mw": mean_power(dist),
        "mean_dbm": float(mw_to_dbm(mean_power(dist))),
        "target_mw": mu,
    }
    sys.stdout.write(text)
    for key, value in summary.items():
        sys.stdout.write(f"# {key} = {_fmt(value)}\n")
    if args.output or args.out_dir:
        out = _output_path(args, "max_entropy.csv")
        _atomic_write(out, text + "".join(f"# {k} = {_fmt(v)}\n" for k, v in summary.items()))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolve_experiment(args, "simulate")
    out = _output_path(args, "simulate.csv")
    report = run_monte_carlo(cfg, workers=args.workers)
    rows = [[getattr(r, c) for c in SIMULATE_COLUMNS] for r in report.rows]
    _atomic_write(out, _csv_text(SIMULATE_COLUMNS, rows))
    _write_manifest(out, "simulate", config_to_sections(cfg), cfg.seed)
    log.info("wrote %d rows to %s", len(rows), out)
    return EXIT_OK


def cmd_crlb(args: argparse.Namespace) -> int:
    cfg = _resolve_experiment(args, "crlb")
    out = _output_path(args, "crlb.csv")
    rows = crlb_experiment(cfg)
    _atomic_write(out, _csv_text(CRLB_COLUMNS, [[getattr(r, c) for c in CRLB_COLUMNS] for r in rows]))
    _write_manifest(out, "crlb", config_to_sections(cfg), cfg.seed)
    log.info("wrote %d rows to %s", len(rows), out)
    return EXIT_OK


def read_report_csv(path: str | Path) -> list[ReportRow]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != SIMULATE_COLUMNS:
                raise UsageError(f"{path}: expected columns {','.join(SIMULATE_COLUMNS)}")
            return [
                ReportRow(
                    r["policy"],
                    r["node_type"],
                    float(r["snr_db"]),
                    int(r["m"]),
                    float(r["normalized_std"]),
                    int(r["trials"]),
                    int(r["excluded"]),
                    int(r["seed"]),
                )
                for r in reader
            ]
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise UsageError(f"malformed report {path}: {exc}") from exc


def format_ratio_table(table: dict[float, tuple[float, float, float]]) -> str:
    lines = [f"{'':>12}  {'Min.':>6}  {'Avg.':>6}  {'Max.':>6}"]
    for snr, (lo, avg, hi) in table.items():
        lines.append(f"{'SNR= ' + format(snr, 'g') + ' dB':>12}  {lo:6.2f}  {avg:6.2f}  {hi:6.2f}")
    return "\n".join(lines) + "\n"


def cmd_ratio_table(args: argparse.Namespace) -> int:
    rows = read_report_csv(args.report)
    try:
        table = accuracy_ratio(rows, policy=args.policy)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sys.stdout.write(format_ratio_table(table))
    out = _output_path(args, "ratio_table.csv")
    _atomic_write(out, _csv_text(RATIO_COLUMNS, [[snr, *vals] for snr, vals in table.items()]))
    return EXIT_OK


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_DIR_ENV} or cwd)")
    p.add_argument("--output", help="explicit output CSV path")


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--manifest", help="re-run from a manifest written by a previous run")
    p.add_argument("--seed", type=int)
    p.add_argument("--m-values", help="comma list or start:stop:step")
    p.add_argument("--policies", help="comma-separated policy names")
    p.add_argument("--workers", type=int, default=1, help="process count; results do not depend on it")
    _add_output_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rssprivacy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize-dist", help="maximum-entropy power distribution")
    p.add_argument("--levels-dbm", help="comma list; write --levels-dbm=-10,-6,-3,0 for negative values")
    p.add_argument("--levels-mw")
    p.add_argument("--mu-dbm", type=float)
    p.add_argument("--mu-mw", type=float)
    _add_output_flags(p)
    p.set_defaults(func=cmd_optimize_dist)

    p = sub.add_parser("simulate", help="normalized distance-error sweep")
    _add_experiment_flags(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--snr-db", help="comma-separated SNR list in dB")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("crlb", help="trusted and un-trusted gain bounds")
    _add_experiment_flags(p)
    p.add_argument("--crlb-trials", type=int)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--crlb-snr-db", type=float)
    p.set_defaults(func=cmd_crlb)

    p = sub.add_parser("ratio-table", help="min/avg/max un-trusted to trusted ratio per SNR")
    p.add_argument("report", help="CSV written by `simulate`")
    p.add_argument("--policy", default="discretized_exponential")
    _add_output_flags(p)
    p.set_defaults(func=cmd_ratio_table)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InfeasibleMean as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, ConfigError, EmptyBlocks) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BracketMiss, SingularFisher, ExclusionRateExceeded, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
