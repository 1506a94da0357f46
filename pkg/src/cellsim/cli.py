"""Command-line entry point: simulate, replay, project, energy, validate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis, logs
from .safety import kinetic_report
from .scenario import ScenarioError, bundled_path, load_scenario
from .scheduler import NodeEvent, run_shift
from .timing import ConstantStream
from .world import GeometricStream, LiveStream


class UsageError(Exception):
    pass


def parse_duration(text: str) -> float:
    """'8h', '30m', '90s', '1h30m' or a plain number of seconds."""
    s = text.strip().lower()
    try:
        return float(s)
    except ValueError:
        pass
    parts = re.fullmatch(r"(?:(\d+(?:\.\d+)?)h)?(?:(\d+(?:\.\d+)?)m)?(?:(\d+(?:\.\d+)?)s)?", s)
    if not s or parts is None or not any(parts.groups()):
        raise UsageError(f"cannot parse duration {text!r} (use e.g. 8h, 30m, 3600)")
    h, m, sec = (float(g) if g else 0.0 for g in parts.groups())
    return h * 3600 + m * 60 + sec


# --- simulate -----------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    sc = load_scenario(args.scenario)
    duration = sc.duration if args.duration is None else args.duration
    if duration <= 0:
        raise UsageError("--duration must be positive")
    seed = sc.seed if args.seed is None else args.seed
    if seed < 0:
        raise UsageError("--seed must be non-negative")
    source = args.monitor or sc.source
    if source == "lidar" and sc.lidar is None:
        raise UsageError("scenario has no lidar section; use --monitor geometric")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = sc.monitor_config()
    world = sc.build_world(seed, with_lidar=source == "lidar")
    n_ticks = int(np.ceil(duration / sc.dt - 1e-9))
    suffix = ".jsonl.gz" if args.gzip else ".jsonl"
    events: list[NodeEvent] = []

    if source == "lidar":
        scan_w = logs.JsonlWriter(out / f"scans{suffix}")
        motion_w = logs.JsonlWriter(out / f"motion{suffix}")
        try:
            stream = LiveStream(
                world, config, intervene=not args.no_intervention,
                scan_sink=scan_w.write, motion_sink=motion_w.write, horizon=n_ticks,
            )
            records = run_shift(sc.graph, stream, duration, seed, injection=sc.injection,
                                alert_delay=sc.alert_delay, events=events)
            stream.run_until(n_ticks - 1)
        finally:
            scan_w.close()
            motion_w.close()
        decisions = stream.decisions[:n_ticks]
    else:
        if config.mode != "fixed":
            raise UsageError("dynamic zones need --monitor lidar")
        stream = GeometricStream(world, config, duration)
        sched_stream = ConstantStream(1.0, sc.dt) if args.no_intervention else stream
        records = run_shift(sc.graph, sched_stream, duration, seed, injection=sc.injection,
                            alert_delay=sc.alert_delay, events=events)
        decisions = stream.decisions[:n_ticks]

    logs.write_events(out / "events.csv", events)
    logs.write_decisions(out / "decisions.csv", decisions)
    logs.write_cycles(out / "cycles.csv", records)
    rate = analysis.pass_rate(records)
    takt = analysis.effective_takt(records) if records else float("nan")
    print(f"cycles={len(records)} pass_rate={100 * rate:.2f}% effective_takt={takt:.1f}s "
          f"duration={duration:g}s seed={seed} monitor={source}")
    return 0


# --- replay -------------------------------------------------------------------


def cmd_replay(args: argparse.Namespace) -> int:
    for p in (args.scans, args.motion):
        if not Path(p).is_file():
            raise UsageError(f"no such file: {p}")
    sc = load_scenario(args.scenario)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    unknown = [s for s in strategies if s not in analysis.STRATEGIES]
    if not strategies or unknown:
        raise UsageError(f"unknown strategies {unknown}; choose from {', '.join(analysis.STRATEGIES)}")
    try:
        scans = logs.read_scans(args.scans)
        motion = logs.read_motion(args.motion)
        report = analysis.replay_compare(scans, motion, strategies, sc.monitor_config(),
                                         sc.segmentation_margin, args.margin, sc.dt)
    except logs.LogError as exc:
        raise UsageError(str(exc)) from None
    rows = [(r.strategy, r.production_time, r.increase_pct, r.stop_ticks, r.slow_ticks) for r in report.rows]
    cols = ("strategy", "production_time_s", "increase_pct", "stop_ticks", "slowdown_ticks")
    if args.out:
        logs.write_csv(args.out, cols, rows)
        print(report.text())
    else:
        print(",".join(cols))
        for r in rows:
            print(",".join(logs._fmt(v) for v in r))
    return 0


# --- project ------------------------------------------------------------------


def cmd_project(args: argparse.Namespace) -> int:
    horizon = parse_duration(args.horizon)
    if horizon <= 0:
        raise UsageError("--horizon must be positive")
    if args.step <= 0:
        raise UsageError("--step must be positive")
    if args.records:
        if args.model != "effective":
            raise UsageError("--records applies to --model effective only")
        rows = logs.read_csv(args.records)
        ends = [float(r["start_time"]) + float(r["wall_time"]) for r in rows]
        ends = np.sort(ends)
        times = np.arange(int(np.floor(horizon / args.step + 1e-9)) + 1) * args.step
        counts = np.searchsorted(ends, times + 1e-9, side="right")
    else:
        model = {
            "human": lambda: analysis.TimingModel.human(args.takt or analysis.HUMAN_TAKT),
            "robot": lambda: analysis.TimingModel.robot_alone(args.takt or analysis.ROBOT_TAKT),
            "effective": lambda: analysis.TimingModel.robot_between_humans(args.takt or analysis.EFFECTIVE_TAKT),
        }[args.model]()
        times, counts = analysis.project_shift(model, horizon, args.step)
    lines = ["time_s,count"] + [f"{t:g},{c}" for t, c in zip(times, counts)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"model={args.model} horizon={horizon:g}s units={int(counts[-1])}", file=sys.stderr)
    return 0


# --- energy -------------------------------------------------------------------

def cmd_energy(args: argparse.Namespace) -> int:
    arms: dict[str, float] = {}
    if args.arms_file:
        try:
            data = json.loads(Path(args.arms_file).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read {args.arms_file}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.arms_file}: invalid JSON at line {exc.lineno}") from None
        data = data.get("energy", data) if isinstance(data, dict) else data
        if not isinstance(data, dict):
            raise UsageError("arms file must map arm names to kinetic energies in joules")
        arms.update(data)
    for item in args.arm or []:
        name, _, value = item.partition("=")
        try:
            arms[name] = float(value)
        except ValueError:
            raise UsageError(f"--arm expects NAME=JOULES, got {item!r}") from None
    if not arms:
        arms = json.loads(bundled_path("arms.json").read_text())
    for name, v in arms.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise UsageError(f"energy for {name!r} must be a number")
    try:
        rows = kinetic_report({k: float(v) for k, v in arms.items()})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"{'arm':<12} {'region':<15} {'T_r [J]':>8} {'limit [J]':>9} {'ratio':>6}  status")
    for r in rows:
        print(f"{r.arm:<12} {r.region:<15} {r.energy:>8.3f} {r.limit:>9.2f} {r.ratio:>6.2f}  {r.status}")
    return 0


# --- validate -----------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    sc = load_scenario(args.scenario)
    print(f"ok: {args.scenario} (seed {sc.seed}, {len(sc.graph.nodes)} task nodes, "
          f"{len(sc.workers)} worker(s), monitor {sc.mode}/{sc.source})")
    return 0


# --- wiring -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cellsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a shift and write logs")
    s.add_argument("scenario", nargs="?", default=str(bundled_path("factory.json")))
    s.add_argument("--duration", type=float, help="seconds (default: scenario duration)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="out")
    s.add_argument("--monitor", choices=("lidar", "geometric"), help="override the scenario's monitor source")
    s.add_argument("--no-intervention", action="store_true", help="log decisions but never slow the robot")
    s.add_argument("--gzip", action="store_true", help="gzip the scan and motion logs")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("replay", help="compare safety strategies on recorded logs")
    r.add_argument("scans")
    r.add_argument("motion")
    r.add_argument("--scenario", default=str(bundled_path("replay_demo.json")))
    r.add_argument("--strategies", default=",".join(analysis.STRATEGIES))
    r.add_argument("--margin", type=float, default=0.2)
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)

    j = sub.add_parser("project", help="cumulative throughput series")
    j.add_argument("--model", choices=("human", "robot", "effective"), default="robot")
    j.add_argument("--horizon", default="8h")
    j.add_argument("--step", type=float, default=1.0)
    j.add_argument("--takt", type=float)
    j.add_argument("--records", help="cycles.csv from simulate (effective model)")
    j.add_argument("--out")
    j.set_defaults(func=cmd_project)

    e = sub.add_parser("energy", help="kinetic-energy safety ratios")
    e.add_argument("arms_file", nargs="?")
    e.add_argument("--arm", action="append", help="NAME=JOULES, repeatable")
    e.set_defaults(func=cmd_energy)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return args.func(args)
    except (UsageError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 1
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
