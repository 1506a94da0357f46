"""Run the factory shift across seeds and summarise cycles, effective takt and pass rate.

    python3 scripts/shift_statistics.py --seeds 20 --out shift_stats.csv
"""

import argparse
import time

from scipy import stats

from cellsim import analysis
from cellsim.logs import write_csv
from cellsim.scenario import bundled_path, load_scenario
from cellsim.scheduler import run_shift
from cellsim.world import GeometricStream


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(bundled_path("factory.json")))
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--first-seed", type=int, default=0)
    ap.add_argument("--out", help="optional per-seed CSV")
    args = ap.parse_args()

    sc = load_scenario(args.scenario)
    cfg = sc.monitor_config()
    rows = []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        t0 = time.perf_counter()
        stream = GeometricStream(sc.build_world(seed, with_lidar=False), cfg, sc.duration)
        recs = run_shift(sc.graph, stream, sc.duration, seed, injection=sc.injection, alert_delay=sc.alert_delay)
        ops = sum(r.operations for r in recs)
        fails = sum(r.failed_operations for r in recs)
        p20, p80 = analysis.cycle_percentiles(recs)
        lo, hi = analysis.pass_rate_band(ops)
        rate = 1 - fails / ops
        paused = sum(r.paused_time for r in recs)
        rows.append((seed, len(recs), analysis.effective_takt(recs), p20, p80, ops, fails, rate, lo <= rate <= hi, paused))
        print(f"seed {seed:>3}: cycles={len(recs)} takt={rows[-1][2]:.1f}s P20={p20:.1f} P80={p80:.1f} "
              f"pass={100 * rate:.2f}% ({fails}/{ops} failed) paused={paused:.0f}s [{time.perf_counter() - t0:.1f}s]")

    ops = sum(r[5] for r in rows)
    fails = sum(r[6] for r in rows)
    lo, hi = stats.binom.interval(0.95, ops, sc.injection.premature_success_prob)
    print(f"pooled: {fails}/{ops} failed operations; 95% interval for q={sc.injection.premature_success_prob:.5f}: "
          f"[{lo:.0f}, {hi:.0f}]; cycles {min(r[1] for r in rows)}-{max(r[1] for r in rows)}; "
          f"takt {min(r[2] for r in rows):.1f}-{max(r[2] for r in rows):.1f}s")
    if args.out:
        write_csv(args.out, ("seed", "cycles", "effective_takt", "p20", "p80", "operations", "failed", "pass_rate",
                             "in_band", "paused_s"), rows)


if __name__ == "__main__":
    main()
