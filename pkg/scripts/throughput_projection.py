"""Cumulative throughput over a shift for the human, robot-alone and robot-between-humans models.

    python3 scripts/throughput_projection.py --horizon 28800 --out projection.csv
"""

import argparse

import numpy as np

from cellsim.analysis import TimingModel, crossover, project_shift
from cellsim.logs import write_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=8 * 3600)
    ap.add_argument("--step", type=float, default=1.0)
    ap.add_argument("--out")
    args = ap.parse_args()

    models = {
        "human": TimingModel.human(),
        "robot_alone": TimingModel.robot_alone(),
        "robot_between_humans": TimingModel.robot_between_humans(),
    }
    series = {}
    for name, model in models.items():
        t, c = project_shift(model, args.horizon, args.step)
        series[name] = c
        print(f"{name:<22} takt={model.takt:7.2f}s units={c[-1]}")
    for other in ("robot_alone", "robot_between_humans"):
        x = crossover(t, series[other], series["human"])
        print(f"{other} overtakes human at {x if x is None else f'{x:.0f} s ({x / 60:.1f} min)'}")
    if args.out:
        write_csv(args.out, ("time_s", *series), np.column_stack([t, *series.values()]).tolist())


if __name__ == "__main__":
    main()
