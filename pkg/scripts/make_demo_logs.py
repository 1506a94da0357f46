"""Record scan and motion logs from the replay demo scenario and compare safety strategies on them.

The logs are generated deterministically rather than shipped, so they can be
rebuilt at any time:

    python3 scripts/make_demo_logs.py --out demo_logs
    cellsim replay demo_logs/scans.jsonl.gz demo_logs/motion.jsonl.gz
"""

import argparse
import time
from pathlib import Path

from cellsim.analysis import STRATEGIES, replay_compare
from cellsim.logs import read_motion, read_scans
from cellsim.scenario import bundled_path, load_scenario
from cellsim.world import record_scans


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(bundled_path("replay_demo.json")))
    ap.add_argument("--out", default="demo_logs")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--duration", type=float)
    args = ap.parse_args()

    sc = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scans_p, motion_p = out / "scans.jsonl.gz", out / "motion.jsonl.gz"
    t0 = time.perf_counter()
    record_scans(sc.build_world(args.seed), args.duration or sc.duration, path=scans_p, motion_path=motion_p)
    print(f"recorded {scans_p} and {motion_p} in {time.perf_counter() - t0:.1f}s")
    report = replay_compare(read_scans(scans_p), read_motion(motion_p), STRATEGIES, sc.monitor_config(),
                            sc.segmentation_margin, 0.2, sc.dt)
    print(report.text())


if __name__ == "__main__":
    main()
