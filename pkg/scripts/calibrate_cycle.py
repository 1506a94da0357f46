"""Check the nominal cycle of the task graph against the 159 s target and show where the time goes.

    python3 scripts/calibrate_cycle.py --cycles 200
"""

import argparse
from collections import defaultdict

import numpy as np

from cellsim.analysis import ROBOT_TAKT
from cellsim.scenario import bundled_path, load_scenario
from cellsim.scheduler import NodeEvent, run_cycle
from cellsim.timing import ConstantStream


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(bundled_path("factory.json")))
    ap.add_argument("--cycles", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sc = load_scenario(args.scenario)
    per_node: dict[str, list[float]] = defaultdict(list)
    totals = []
    for i in range(args.cycles):
        events: list[NodeEvent] = []
        rec = run_cycle(sc.graph, ConstantStream(1.0, sc.dt), args.seed, cycle_index=i, events=events)
        totals.append(rec.nominal_time)
        for e in events:
            per_node[e.node].append(e.nominal)
    for node, vals in per_node.items():
        print(f"{node:<10} mean={np.mean(vals):7.2f}s  runs/cycle={len(vals) / args.cycles:.2f}")
    mean = float(np.mean(totals))
    print(f"nominal cycle: mean={mean:.2f}s sd={np.std(totals):.2f}s target={ROBOT_TAKT:.0f}s "
          f"(off by {mean - ROBOT_TAKT:+.2f}s)")


if __name__ == "__main__":
    main()
