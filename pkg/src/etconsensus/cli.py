"""Command line entry point.

    etconsensus synth <cfg>
    etconsensus run <cfg> [--seed S] [--h H] [--t-end T] [--out DIR] [--sweep S1,S2,...]
    etconsensus compare <cfg> --variants a,b
    etconsensus report <run-dir>

``run`` exits 0 on a clean run, 2 when invariants are violated, 3 when the Zeno
guard trips and 4 on numerical divergence.  Invalid scenarios exit 1.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, ScenarioConfig, build_scenario, format_scenario, load_scenario
from .export import events_csv, trajectory_csv, write_atomic
from .hybrid_sim import DivergenceError, ZenoError, run
from .metrics import RunReport, compare_protocols, run_report
from .synthesis import SynthesisError, format_gains

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATIONS = 2
EXIT_ZENO = 3
EXIT_DIVERGED = 4

log = logging.getLogger("etconsensus")


def _overrides(args) -> dict:
    sim = {}
    if getattr(args, "seed", None) is not None:
        sim["seed"] = args.seed
    if getattr(args, "h", None) is not None:
        sim["h"] = args.h
    if getattr(args, "t_end", None) is not None:
        sim["t_end"] = args.t_end
    return sim


def apply_overrides(cfg: ScenarioConfig, sim: dict | None = None, out: str | None = None, variant: str | None = None):
    from .config import validate

    sections = {}
    if sim:
        sections["sim"] = sim
    if out is not None:
        sections["output"] = {"directory": out}
    if variant is not None:
        sections["protocol"] = {"variant": variant}
    cfg = cfg.replace(**sections) if sections else cfg
    validate(cfg)
    return cfg


def run_command(cfg: ScenarioConfig, out_dir=None, plots: bool = True) -> int:
    """Synthesize, simulate and write outputs for one validated scenario."""
    out = Path(out_dir or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "scenario.cfg", format_scenario(cfg))
    try:
        scenario = build_scenario(cfg)
    except SynthesisError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_atomic(out / "gains.txt", format_gains(scenario.gains) + "\n")
    try:
        traj = run(scenario)
    except ZenoError as exc:
        write_atomic(out / "zeno.json", json.dumps({"reason": exc.stats.reason, "events": exc.stats.events_per_agent, "min_gaps": {str(k): v for k, v in exc.stats.min_gap_per_agent.items()}}, indent=2, default=str))
        print(str(exc), file=sys.stderr)
        return EXIT_ZENO
    except DivergenceError as exc:
        print(f"{exc} (last valid time {exc.last_valid_time:.12g})", file=sys.stderr)
        return EXIT_DIVERGED
    write_atomic(out / "trajectory.csv", trajectory_csv(traj))
    write_atomic(out / "events.csv", events_csv(traj))
    report = run_report(traj, scenario)
    write_atomic(out / "report.txt", report.format_text() + "\n")
    write_atomic(out / "summary.json", report.to_json() + "\n")
    if plots and cfg.output.plots:
        from .plots import emit_plots

        emit_plots(traj, out, cfg.output.plots)
    print(report.format_text())
    if report.zeno_tripped:
        return EXIT_ZENO
    return EXIT_VIOLATIONS if report.violations else EXIT_OK


def _sweep_one(job):
    cfg, out = job
    return run_command(cfg, out, plots=False)


def cmd_synth(args) -> int:
    cfg = load_scenario(args.config)
    scenario = build_scenario(cfg)
    print(format_gains(scenario.gains))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = apply_overrides(load_scenario(args.config), _overrides(args), args.out)
    if not args.sweep:
        return run_command(cfg, plots=not args.no_plots)
    seeds = [int(s) for s in args.sweep.split(",") if s.strip()]
    base = Path(cfg.output.directory)
    jobs = [(apply_overrides(cfg, {"seed": s}), base / f"seed-{s}") for s in seeds]
    with ProcessPoolExecutor() as pool:
        codes = list(pool.map(_sweep_one, jobs))
    for s, c in zip(seeds, codes):
        print(f"seed {s}: exit {c}")
    return max(codes)


def cmd_compare(args) -> int:
    cfg = load_scenario(args.config)
    names = [v.strip() for v in args.variants.split(",")]
    if len(names) != 2:
        raise ConfigError(["--variants needs exactly two comma-separated variants"])
    reports = []
    for name in names:
        c = apply_overrides(cfg, _overrides(args), variant=name)
        scenario = build_scenario(c)
        reports.append(run_report(run(scenario), scenario))
    summary = compare_protocols(*reports)
    print(summary.format_text())
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.run_dir) / "summary.json"
    report = RunReport.from_dict(json.loads(path.read_text()))
    print(report.format_text())
    return EXIT_VIOLATIONS if report.violations else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etconsensus", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize K, Gamma (and F) for a scenario")
    p.add_argument("config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="simulate a scenario and write CSVs, report and plots")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--out", help="output directory (overrides [output] directory)")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--sweep", help="comma-separated seeds run concurrently into seed-<S> subdirectories")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="event counts of two variants on the same scenario")
    p.add_argument("config")
    p.add_argument("--variants", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="print the report stored in a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except SynthesisError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
