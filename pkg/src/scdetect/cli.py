"""Command-line harness: calibrate, gen-trace, run, evaluate, leakage.

Exit codes: 0 success, 2 configuration or parse error, 3 internal invariant
violation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .calibration import CalibrationError, read_thresholds, write_thresholds
from .experiments import (
    ConfigError,
    ExperimentConfig,
    InvariantError,
    calibrate,
    evaluate_confusion,
    gamma_label,
    parse_config_file,
    run_leakage,
    scenario_for,
)
from .mitigation import CATEGORIES
from .model import Thresholds
from .simkernel import ConfigurationError, ProcessSummary, run_simulation
from .workloads import NOISE_PRESETS, PRESETS, TraceFormatError, build_corpus, generate, get_profile, read_trace, write_trace

log = logging.getLogger("scdetect")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse already exits 2; keep usage on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value config file")
    common.add_argument("--seed", type=int, help="seed for corpus generation")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    common.add_argument("--gamma", help="comma-separated gamma list")
    common.add_argument("--policy", choices=("none", "te", "sc", "te+sc"), help="mitigation policy")
    common.add_argument("--thresholds", help="thresholds file, or 'inline' to calibrate first")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="scdetect", description="HPC-based cache side-channel detection experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("calibrate", parents=[common], help="derive thresholds and window bounds")

    gen = sub.add_parser("gen-trace", parents=[common], help="write synthetic scdtrace v1 files")
    what = gen.add_mutually_exclusive_group(required=True)
    what.add_argument("--profile", help=f"workload preset ({', '.join(sorted(PRESETS))})")
    what.add_argument("--corpus", action="store_true", help="write the whole evaluation corpus")
    gen.add_argument("--horizon", type=int, help="trace length in cycles")
    gen.add_argument("--noise", choices=sorted(NOISE_PRESETS), help="noise preset")

    run = sub.add_parser("run", parents=[common], help="simulate trace files and log every event")
    run.add_argument("traces", nargs="+", type=Path, help="scdtrace v1 files")

    sub.add_parser("evaluate", parents=[common], help="confusion matrix over a gamma sweep")
    sub.add_parser("leakage", parents=[common], help="secret bytes leaked before detection")
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict[str, str] = {}
    if args.config is not None:
        values.update(parse_config_file(args.config))
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    flags = {"seed": args.seed, "gammas": args.gamma, "policy": args.policy, "thresholds": args.thresholds}
    if getattr(args, "horizon", None) is not None:
        flags["horizon"] = args.horizon
    if getattr(args, "noise", None) is not None:
        flags["noise"] = args.noise
    values.update({k: str(v) for k, v in flags.items() if v is not None})
    return ExperimentConfig.from_mapping(values)


def _header(cfg: ExperimentConfig, command: str, extra: Iterable[tuple[str, str]] = ()) -> list[str]:
    lines = [f"# command={command}"]
    lines += [f"# {k}={v}" for k, v in cfg.items()]
    lines += [f"# {k}={v}" for k, v in extra]
    return lines


def _write_csv(path: Path, header: list[str], columns: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with path.open("w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _thresholds(cfg: ExperimentConfig, seed: int) -> tuple[Thresholds, str]:
    if cfg.thresholds == "inline":
        return calibrate(cfg, seed).thresholds, "inline"
    return read_thresholds(cfg.thresholds), cfg.thresholds


def _phi_items(t: Thresholds) -> list[tuple[str, str]]:
    return [(f"phi{i}", f"{float(v):.6g}") for i, v in enumerate(t.as_tuple(), 1)]


def cmd_calibrate(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    seed = cfg.seed if cfg.seed is not None else 0
    result = calibrate(replace(cfg, seed=seed), seed)
    out = args.out
    write_thresholds(result.thresholds, out / "thresholds.txt")
    w_min, w_max = result.window_bounds
    (out / "window_bounds.txt").write_text(f"w_min={w_min}\nw_max={w_max}\n")
    rows = [(phi, cat, f"{float(a):.6f}", f"{float(b):.6f}", f"{float(v):.6f}") for phi, cat, a, b, v in result.audit.rows]
    _write_csv(
        out / "calibration_audit.csv", _header(replace(cfg, seed=seed), "calibrate"),
        ("threshold", "attack_category", "attack_mean", "benign_mean", "value"), rows,
    )
    print("threshold  attack_mean  benign_mean  value")
    for phi, _cat, a, b, v in rows:
        print(f"{phi:<9}  {a:>11}  {b:>11}  {v}")
    print(f"window bounds: w_min={w_min} w_max={w_max}")
    return EXIT_OK


def cmd_gen_trace(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    seed = cfg.require_seed()
    if args.corpus:
        traces = build_corpus(cfg.corpus_spec(), seed)
    else:
        profile = get_profile(args.profile)
        traces = [generate(profile, seed, cfg.horizon, NOISE_PRESETS[cfg.noise], profile.name, cfg.record_cycles)]
    for t in traces:
        path = args.out / f"{t.name}.scdtrace"
        write_trace(t, path)
        print(path)
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    seed = cfg.require_seed()
    traces = [read_trace(p) for p in args.traces]
    thresholds, source = _thresholds(cfg, seed)
    gamma = cfg.gammas[0]
    report = run_simulation(scenario_for(cfg, thresholds, traces, gamma, cfg.policy))
    header = _header(cfg, "run", [("thresholds_source", source), ("gamma_used", str(gamma))] + _phi_items(thresholds))
    header.append("# traces=" + ",".join(str(p) for p in args.traces))
    out = args.out
    _write_csv(
        out / "events.csv", header, ("timestamp", "core", "kind", "pid", "detail"),
        ((e.timestamp, e.core, e.kind.value, e.pid, e.detail()) for e in report.events),
    )
    columns = [f.name for f in fields(ProcessSummary)]
    _write_csv(
        out / "processes.csv", header, columns,
        ([_cell(getattr(p, c)) for c in columns] for p in report.processes),
    )
    _write_csv(out / "ledger.csv", header, ("pid", "category", "cycles"), report.ledger.rows())
    totals = report.ledger.totals()
    suspected = sum(p.ever_suspected for p in report.processes)
    print(f"processes={len(report.processes)} suspected={suspected} events={len(report.events)}")
    print("overhead " + " ".join(f"{c}={totals[c]}" for c in CATEGORIES))
    return EXIT_OK


def _cell(v: object) -> object:
    if isinstance(v, bool):
        return int(v)
    return "" if v is None else v


def cmd_evaluate(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    seed = cfg.require_seed()
    thresholds, source = _thresholds(cfg, seed)
    traces = build_corpus(cfg.corpus_spec(), seed)
    matrix = evaluate_confusion(cfg, thresholds, traces)
    header = _header(cfg, "evaluate", [("thresholds_source", source)] + _phi_items(thresholds))
    _write_csv(
        args.out / "confusion.csv", header, ("gamma", "class", "suspected", "count"),
        ((g, c, int(s), n) for g, c, s, n in matrix.counts),
    )
    summary = [(g, matrix.false_positives(g), matrix.false_negatives(g)) for g in matrix.gammas]
    _write_csv(args.out / "summary.csv", header, ("gamma", "false_positives", "false_negatives"), summary)
    print("gamma  FP  FN")
    for g, fp, fn in summary:
        print(f"{g:>5}  {fp:>2}  {fn:>2}")
    if not args.no_figures:
        from .plotting import plot_confusion

        plot_confusion(matrix, args.out / "confusion.png")
    return EXIT_OK


def cmd_leakage(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    seed = cfg.require_seed()
    thresholds, source = _thresholds(cfg, seed)
    rows = run_leakage(cfg, thresholds, seed)
    header = _header(cfg, "leakage", [("thresholds_source", source)] + _phi_items(thresholds))
    _write_csv(
        args.out / "leakage.csv", header,
        ("gamma", "delay_us", "extracted", "percent", "windows", "detected_at"),
        (
            (gamma_label(r.gamma), r.delay_us, r.extracted, f"{r.percent:.2f}", r.windows, _cell(r.detected_at))
            for r in rows
        ),
    )
    print("gamma  delay_us  extracted")
    for r in rows:
        print(f"{gamma_label(r.gamma):>5}  {r.delay_us:>8}  {r.extracted:>9}")
    if not args.no_figures:
        from .plotting import plot_leakage

        plot_leakage(rows, args.out / "leakage.png")
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "gen-trace": cmd_gen_trace,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "leakage": cmd_leakage,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = _config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CalibrationError, TraceFormatError, ConfigurationError) as exc:
        print(f"scdetect: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"scdetect: error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantError, AssertionError) as exc:
        print(f"scdetect: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
