"""Command-line entry point.

Subcommands: ``run`` executes an experiment plan, ``stats`` runs the
nonparametric pipeline on a results table, ``export`` emits plot-ready
panel CSVs and rendered figures, and ``replay`` recounts a JSON-lines
event log against the reported metrics.

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path

from . import figures, orchestrator, stats
from .config import ConfigurationError, load_plan

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aura",
        description="Two-station overload simulator with advisor guidance and delayed reward shaping.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment plan")
    run.add_argument("--plan", required=True, help="plan file (YAML)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seeds", help="override seed list, e.g. 0,1,2")
    run.add_argument("--traffic", help="override traffic levels, e.g. normal,high")
    run.add_argument("--config", help="override configurations, e.g. marl_only,aura")
    run.add_argument("--backend", choices=["scripted", "replay", "remote"], help="override advisor backend")
    run.add_argument("--batch-interval", type=int, help="override advisor batch interval (steps)")
    run.add_argument("--parallelism", type=int, default=1, help="experiment cells run in parallel")
    run.add_argument("--events", action="store_true", help="write step-level events.jsonl")
    run.add_argument("--replay-log", help="replay backend response log (JSONL)")

    st = sub.add_parser("stats", help="nonparametric tests on a results table")
    st.add_argument("--results", required=True, help="results.csv from a run")
    st.add_argument("--out", required=True, help="stats.csv to write")

    exp = sub.add_parser("export", help="emit plot-ready panel data and figures")
    exp.add_argument("--results", required=True, help="results.csv from a run")
    exp.add_argument("--figure", default="all", choices=["a", "d", "e", "all"], help="panel to export")
    exp.add_argument("--out", required=True, help="output directory")
    exp.add_argument("--no-render", action="store_true", help="skip PNG rendering, CSVs only")

    rep = sub.add_parser("replay", help="recount an events.jsonl log")
    rep.add_argument("--events", required=True, help="events.jsonl from a run")
    return parser


def _csv_list(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _cmd_run(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    if args.seeds:
        plan.seeds = [int(s) for s in _csv_list(args.seeds)]
    if args.traffic:
        plan.traffic_levels = [t.lower() for t in _csv_list(args.traffic)]
    if args.config:
        plan.configurations = [c.lower() for c in _csv_list(args.config)]
    if args.backend:
        plan.backend = args.backend
    if args.replay_log:
        plan.replay_log = args.replay_log
    if args.batch_interval:
        plan.batch_interval_steps = args.batch_interval
    plan.__post_init__()  # revalidate after overrides

    rows = orchestrator.run_experiment(
        plan,
        args.out,
        parallelism=max(1, args.parallelism),
        collect_events=args.events,
    )
    figures.export_figure_data(rows, "all", Path(args.out) / "plotdata")
    cells = len(plan.configurations) * len(plan.traffic_levels) * len(plan.seeds)
    print(f"wrote {len(rows)} result rows ({cells} cells) to {Path(args.out) / 'results.csv'}")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    rows = orchestrator.read_results_csv(args.results)
    stats_rows = stats.analyze_results(rows)
    stats.write_stats_csv(stats_rows, args.out)
    significant = sum(1 for r in stats_rows if r["stars"])
    print(f"wrote {len(stats_rows)} comparisons ({significant} significant) to {args.out}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    rows = orchestrator.read_results_csv(args.results)
    written = figures.export_figure_data(rows, args.figure, args.out, render=not args.no_render)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.events)
    if not path.is_file():
        raise FileNotFoundError(f"events log not found: {path}")
    steps: dict[tuple, int] = defaultdict(int)
    failures: dict[tuple, int] = defaultdict(int)
    dropped: dict[tuple, int] = defaultdict(int)
    delayed: dict[tuple, int] = defaultdict(int)
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            event = json.loads(line)
            key = (event.get("config"), event.get("traffic"), event.get("seed"))
            if event.get("type") == "step":
                steps[key] += 1
                failures[key] += bool(event.get("failure"))
                dropped[key] += int(event.get("dropped_requests", 0))
            elif event.get("type") == "delayed_reward":
                delayed[key] += 1
    if not steps and not delayed:
        print("no events found")
        return 0
    for key in sorted(steps.keys() | delayed.keys(), key=str):
        config, traffic, seed = key
        print(
            f"config={config} traffic={traffic} seed={seed} "
            f"steps={steps[key]} failure_steps={failures[key]} "
            f"dropped_requests={dropped[key]} delayed_rewards={delayed[key]}"
        )
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "stats": _cmd_stats,
    "export": _cmd_export,
    "replay": _cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
