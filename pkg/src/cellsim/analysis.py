"""Throughput projections, cycle statistics and offline safety-strategy comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .logs import MotionRecord, ScanRecord, check_aligned
from .safety import SLOWDOWN_RATIO, MonitorConfig, SpeedMode, monitor_tick
from .scheduler import CycleRecord
from .world import robot_state_from

HUMAN_TAKT = 141.0
ROBOT_TAKT = 159.0
EFFECTIVE_TAKT = 18600.0 / 108


@dataclass(frozen=True)
class TimingModel:
    kind: str
    takt: float
    work: float | None = None
    rest: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("human", "robot_alone", "robot_between_humans"):
            raise ValueError(f"unknown timing model {self.kind!r}")
        if self.takt <= 0:
            raise ValueError("takt must be positive")
        if (self.work is None) != (self.rest is None):
            raise ValueError("work and rest must be given together")
        if self.work is not None and (self.work <= 0 or self.rest < 0):
            raise ValueError("work must be positive and rest non-negative")

    @classmethod
    def human(cls, takt: float = HUMAN_TAKT, work: float = 3000.0, rest: float = 600.0) -> TimingModel:
        return cls("human", takt, work, rest)

    @classmethod
    def robot_alone(cls, takt: float = ROBOT_TAKT) -> TimingModel:
        return cls("robot_alone", takt)

    @classmethod
    def robot_between_humans(cls, takt: float = EFFECTIVE_TAKT) -> TimingModel:
        return cls("robot_between_humans", takt)

    def working_time(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.work is None:
            return t
        period = self.work + self.rest
        return np.floor(t / period) * self.work + np.minimum(np.mod(t, period), self.work)


def project_shift(model: TimingModel, horizon: float, step: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative completed units sampled every ``step`` seconds over [0, horizon]."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    n = int(math.floor(horizon / step + 1e-9))
    times = np.arange(n + 1) * step
    # the small epsilon keeps exact multiples of takt from flooring one short
    counts = np.floor(model.working_time(times) / model.takt + 1e-9).astype(int)
    return times, counts


def series_from_records(records: Sequence[CycleRecord], horizon: float, step: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Measured cumulative series: a unit counts once its cycle has ended."""
    n = int(math.floor(horizon / step + 1e-9))
    times = np.arange(n + 1) * step
    ends = np.sort([r.end_time for r in records])
    return times, np.searchsorted(ends, times + 1e-9, side="right")


def crossover(times: Sequence[float], a: Sequence[float], b: Sequence[float]) -> float | None:
    """Time at which series ``a`` overtakes ``b``.

    0 when ``a`` is never behind; otherwise the first time after ``a`` first
    falls behind at which it is strictly ahead again; None if it never is.
    """
    a, b, times = np.asarray(a), np.asarray(b), np.asarray(times)
    if a.shape != b.shape or a.shape != times.shape:
        raise ValueError("series must share the same time axis")
    behind = np.flatnonzero(b > a)
    if behind.size == 0:
        return 0.0
    ahead = np.flatnonzero(a[behind[0]:] > b[behind[0]:])
    return float(times[behind[0] + ahead[0]]) if ahead.size else None


def effective_takt(records: Sequence[CycleRecord]) -> float:
    if not records:
        raise ValueError("effective takt needs at least one cycle")
    return float(sum(r.wall_time for r in records) / len(records))


def nearest_rank(values: Sequence[float], p: float) -> float:
    if not 0 < p < 100:
        raise ValueError("percentile must lie in (0, 100)")
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("percentile of an empty sequence")
    rank = max(1, math.ceil(p / 100.0 * v.size - 1e-9))
    return float(v[rank - 1])


def cycle_percentiles(records: Sequence[CycleRecord], ps: Iterable[float] = (20, 80)) -> list[float]:
    walls = [r.wall_time for r in records]
    return [nearest_rank(walls, p) for p in ps]


def pass_rate(records: Sequence[CycleRecord]) -> float:
    ops = sum(r.operations for r in records)
    return 1.0 - sum(r.failed_operations for r in records) / ops if ops else float("nan")


def pass_rate_band(n: int, p: float = 322 / 324, confidence: float = 0.95) -> tuple[float, float]:
    """Central binomial interval for the success fraction over ``n`` trials."""
    lo, hi = stats.binom.interval(confidence, n, p)
    return float(lo) / n, float(hi) / n


# --- offline strategy comparison ---------------------------------------------------

STRATEGIES = ("none", "fixed_margin", "fixed_zones", "dynamic_spheres")


@dataclass(frozen=True)
class StrategyResult:
    strategy: str
    production_time: float
    increase_pct: float
    stop_ticks: int
    slow_ticks: int


@dataclass
class ProductivityReport:
    rows: list[StrategyResult]

    def by_name(self) -> dict[str, StrategyResult]:
        return {r.strategy: r for r in self.rows}

    def increase(self, strategy: str) -> float:
        return self.by_name()[strategy].increase_pct

    def text(self) -> str:
        lines = [f"{'strategy':<16} {'time_s':>10} {'increase_%':>10} {'stop':>6} {'slow':>6}"]
        lines += [f"{r.strategy:<16} {r.production_time:>10.1f} {r.increase_pct:>10.2f} {r.stop_ticks:>6} {r.slow_ticks:>6}"
                  for r in self.rows]
        return "\n".join(lines)


def _outside_known(points: np.ndarray, cuboids: Sequence) -> np.ndarray:
    keep = np.ones(len(points), dtype=bool)
    for c in cuboids:
        keep &= ~c.contains(points)
    return keep


def margin_mode(points: np.ndarray, robot_cuboids: Sequence, config: MonitorConfig, margin: float) -> SpeedMode:
    """Stop if any return that is neither robot nor table lies within ``margin`` of the table footprint."""
    if not config.static_cuboids:
        raise ValueError("the fixed-margin strategy needs the table as a static cuboid")
    if len(points) == 0:
        return SpeedMode.NORMAL
    lo = np.min([c.bounds()[0] for c in config.static_cuboids], axis=0)
    hi = np.max([c.bounds()[1] for c in config.static_cuboids], axis=0)
    zlo, zhi = config.grid.min_corner[2], config.grid.max_corner[2]
    p = np.asarray(points)
    inside = ((p[:, 0] >= lo[0] - margin) & (p[:, 0] <= hi[0] + margin)
              & (p[:, 1] >= lo[1] - margin) & (p[:, 1] <= hi[1] + margin)
              & (p[:, 2] >= zlo) & (p[:, 2] <= zhi))
    p = p[inside]
    if len(p) == 0:
        return SpeedMode.NORMAL
    known = [*robot_cuboids, *(c.inflated(config.background_margin) for c in config.static_cuboids)]
    return SpeedMode.STOP if _outside_known(p, known).any() else SpeedMode.NORMAL


def strategy_modes(
    scans: Sequence[ScanRecord],
    motion: Sequence[MotionRecord],
    strategy: str,
    config: MonitorConfig,
    segmentation_margin: float = 0.07,
    margin: float = 0.2,
) -> list[SpeedMode]:
    check_aligned(scans, motion)
    if strategy == "none":
        return [SpeedMode.NORMAL] * len(scans)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    cfg = replace(config, mode="dynamic" if strategy == "dynamic_spheres" else "fixed", debounce_ticks=0)
    out = []
    for s, m in zip(scans, motion):
        state = robot_state_from(m.cuboids(), m.speeds(), m.tool, segmentation_margin)
        if strategy == "fixed_margin":
            robot = [*state.links, *([state.tool] if state.tool is not None else [])]
            out.append(margin_mode(s.points, robot, cfg, margin))
        else:
            out.append(monitor_tick(s.points, state, cfg, s.tick).mode)
    return out


def replay_compare(
    scans: Sequence[ScanRecord],
    motion: Sequence[MotionRecord],
    strategies: Sequence[str] = STRATEGIES,
    config: MonitorConfig | None = None,
    segmentation_margin: float = 0.07,
    margin: float = 0.2,
    dt: float | None = None,
) -> ProductivityReport:
    """Production time each strategy would have needed for the logged robot work.

    Per tick: a stop costs the tick twice (waiting, then redoing the work);
    a slowdown stretches moving ticks by 1/0.7; idle ticks cost dt.
    """
    check_aligned(scans, motion)
    if not scans:
        raise ValueError("empty logs")
    config = config or MonitorConfig()
    if dt is None:
        dt = scans[1].t - scans[0].t if len(scans) > 1 else 0.1
    moving = np.array([any(l.speed > 0 for l in m.links) for m in motion])
    base = float(np.full(len(scans), dt).sum())
    rows = []
    for name in strategies:
        modes = strategy_modes(scans, motion, name, config, segmentation_margin, margin)
        stop = np.array([md is SpeedMode.STOP for md in modes])
        slow = np.array([md is SpeedMode.SLOWDOWN for md in modes])
        cost = np.full(len(modes), dt)
        cost[stop] = 2 * dt
        cost[slow & moving] = dt / SLOWDOWN_RATIO
        total = float(cost.sum())
        rows.append(StrategyResult(name, total, 100.0 * (total - base) / base, int(stop.sum()), int(slow.sum())))
    return ProductivityReport(rows)
