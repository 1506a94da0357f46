"""Deterministic workcell: scripted robot links, scripted workers, obstacles, LiDAR.

The world advances on a fixed clock (dt = monitoring cycle). Robot motion is
a looped keyframe script whose phase advances at the commanded speed ratio;
workers and obstacles follow wall-clock scripts and ignore the robot.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Cuboid, Pose, cast_rays
from .logs import JsonlWriter, MotionRecord, ScanRecord, write_scans
from .safety import (
    LinkState,
    ModeFilter,
    MonitorConfig,
    RobotState,
    SafetyDecision,
    SpeedMode,
    evaluate_zones,
    monitor_tick,
)
from .timing import DT, FOREVER, TimelineStream


@dataclass(frozen=True)
class Keyframe:
    t: float
    positions: dict[str, tuple[float, float, float]]


@dataclass
class RobotScript:
    """Link cuboids moved along piecewise-linear keyframes, looped.

    The last keyframe's time is the loop period; its positions should equal
    the first keyframe's for a seamless loop.
    """

    sizes: dict[str, tuple[float, float, float]]
    keyframes: list[Keyframe]
    tool: str | None = None

    def __post_init__(self) -> None:
        if not self.keyframes:
            raise ValueError("robot script needs at least one keyframe")
        times = [k.t for k in self.keyframes]
        if times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("keyframe times must start at 0 and increase strictly")
        for k in self.keyframes:
            missing = set(self.sizes) - set(k.positions)
            if missing:
                raise ValueError(f"keyframe at t={k.t} lacks links {sorted(missing)}")
        if self.tool is not None and self.tool not in self.sizes:
            raise ValueError(f"tool link {self.tool!r} is not a robot link")
        self._times = np.array(times)
        self._pos = {n: np.array([k.positions[n] for k in self.keyframes], dtype=float) for n in self.sizes}

    @property
    def period(self) -> float:
        return float(self._times[-1])

    def positions(self, phase: float) -> dict[str, np.ndarray]:
        if len(self.keyframes) == 1 or self.period == 0:
            return {n: p[0].copy() for n, p in self._pos.items()}
        s = phase % self.period
        i = min(bisect_right(self._times, s) - 1, len(self._times) - 2)
        a = (s - self._times[i]) / (self._times[i + 1] - self._times[i])
        return {n: p[i] + a * (p[i + 1] - p[i]) for n, p in self._pos.items()}

    def keyframe_heights(self, link: str) -> np.ndarray:
        return self._pos[link][:, 2]


@dataclass
class WorkerScript:
    """A worker-sized cuboid that repeats a timed visit.

    ``waypoints`` are (seconds since visit start, center xyz). ``period`` is
    a fixed spacing between visit starts or a (lo, hi) range sampled per visit.
    """

    name: str
    size: tuple[float, float, float]
    waypoints: list[tuple[float, tuple[float, float, float]]]
    period: float | tuple[float, float]
    first_visit: float = 0.0

    def __post_init__(self) -> None:
        times = [w[0] for w in self.waypoints]
        if len(times) < 2 or times[0] != 0.0 or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"worker {self.name!r}: waypoint times must start at 0 and increase strictly")
        lo = self.period if np.isscalar(self.period) else min(self.period)
        if lo <= 0:
            raise ValueError(f"worker {self.name!r}: period must be positive")
        if lo < times[-1]:
            raise ValueError(f"worker {self.name!r}: period shorter than one visit ({times[-1]} s)")
        self._times = np.array(times)
        self._pts = np.array([w[1] for w in self.waypoints], dtype=float)

    @property
    def visit_length(self) -> float:
        return float(self._times[-1])

    def position_in_visit(self, s: float) -> np.ndarray | None:
        if s < 0 or s > self.visit_length:
            return None
        i = min(bisect_right(self._times, s) - 1, len(self._times) - 2)
        a = (s - self._times[i]) / (self._times[i + 1] - self._times[i])
        return self._pts[i] + a * (self._pts[i + 1] - self._pts[i])


class VisitSchedule:
    """Lazily generated visit start times for one worker, reproducible per seed."""

    def __init__(self, script: WorkerScript, seed: int, index: int):
        self.script = script
        self._rng = np.random.default_rng([seed, 101, index])
        self.starts = [float(script.first_visit)]

    def _extend_to(self, t: float) -> None:
        while self.starts[-1] <= t:
            p = self.script.period
            gap = float(p) if np.isscalar(p) else float(self._rng.uniform(*p))
            self.starts.append(self.starts[-1] + gap)

    def position(self, t: float) -> np.ndarray | None:
        self._extend_to(t)
        i = bisect_right(self.starts, t) - 1
        if i < 0:
            return None
        return self.script.position_in_visit(t - self.starts[i])


@dataclass(frozen=True)
class ObstacleEvent:
    spawn: float
    despawn: float
    cuboid: Cuboid


@dataclass(frozen=True)
class ObstacleRandomization:
    size: tuple[tuple[float, float], ...] = ((0.3, 0.5), (0.03, 0.35), (0.03, 0.35))
    position: tuple[tuple[float, float], ...] = ((-0.65, 0.45), (-1.45, 1.1), (0.0, 1.85))

    def __post_init__(self) -> None:
        for lo, hi in (*self.size, *self.position):
            if hi < lo:
                raise ValueError("randomization ranges must be [lo, hi] with lo <= hi")


def spawn_random_obstacle(spec: ObstacleRandomization, seed: int | Sequence[int]) -> Cuboid:
    rng = np.random.default_rng(seed)
    size = [rng.uniform(lo, hi) for lo, hi in spec.size]
    center = [rng.uniform(lo, hi) for lo, hi in spec.position]
    return Cuboid.from_center_size(center, size)


@dataclass
class LidarModel:
    """Ray-pattern LiDAR with per-run mount drift and update delay, per-scan range noise.

    Angles are in the mount frame (x forward, z up). Returned points are
    rounded to ``quantum`` meters.
    """

    mount: Pose = field(default_factory=lambda: Pose.from_rpy(0.0, 0.0, math.radians(-108.8), (0.75, 1.5, 1.9)))
    azimuth_deg: tuple[float, float] = (-50.0, 50.0)
    elevation_deg: tuple[float, float] = (-60.0, 5.0)
    spacing_deg: float = 1.0
    max_range: float = 8.0
    noise_std_range: tuple[float, float] = (0.0, 0.005)
    drift_range: tuple[float, float] = (-0.01, 0.01)
    delay_range: tuple[float, float] = (0.0, 0.075)
    quantum: float = 1e-4

    def __post_init__(self) -> None:
        for name in ("noise_std_range", "drift_range", "delay_range", "azimuth_deg", "elevation_deg"):
            lo, hi = getattr(self, name)
            if hi < lo:
                raise ValueError(f"{name} must be [lo, hi] with lo <= hi")
        if self.noise_std_range[0] < 0 or self.delay_range[0] < 0:
            raise ValueError("noise std and delay must be non-negative")
        if self.spacing_deg <= 0:
            raise ValueError("spacing_deg must be positive")
        az = np.radians(np.arange(self.azimuth_deg[0], self.azimuth_deg[1] + 1e-9, self.spacing_deg))
        el = np.radians(np.arange(self.elevation_deg[0], self.elevation_deg[1] + 1e-9, self.spacing_deg))
        A, E = np.meshgrid(az, el, indexing="ij")
        local = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)
        self.directions = local @ self.mount.rotation.T

    @property
    def n_rays(self) -> int:
        return len(self.directions)


@dataclass(frozen=True)
class LidarRun:
    """Quantities drawn once per run."""

    drift: tuple[float, float, float]
    delay: float
    delay_ticks: int
    seed: int

    @classmethod
    def sample(cls, model: LidarModel, seed: int, dt: float = DT) -> LidarRun:
        rng = np.random.default_rng([seed, 202])
        drift = tuple(float(v) for v in rng.uniform(*model.drift_range, size=3))
        delay = float(rng.uniform(*model.delay_range))
        return cls(drift, delay, int(math.floor(delay / dt + 1e-9)), seed)


@dataclass(frozen=True)
class Snapshot:
    """Everything observable at one tick."""

    tick: int
    time: float
    static: tuple[Cuboid, ...]
    links: dict[str, Cuboid]
    link_speeds: dict[str, float]
    workers: tuple[Cuboid, ...]
    obstacles: tuple[Cuboid, ...]

    @property
    def external(self) -> tuple[Cuboid, ...]:
        return self.workers + self.obstacles

    def all_cuboids(self) -> list[Cuboid]:
        return [*self.static, *self.links.values(), *self.workers, *self.obstacles]


def scan(snapshot: Snapshot, lidar: LidarModel, run: LidarRun) -> np.ndarray:
    """Point cloud (N, 3) of nearest hits, with range noise and mount drift."""
    nominal = lidar.mount.t
    actual = nominal + np.asarray(run.drift)
    cuboids = snapshot.all_cuboids()
    if not cuboids:
        return np.empty((0, 3))
    dist = cast_rays(actual, lidar.directions, cuboids)
    hit = np.isfinite(dist) & (dist <= lidar.max_range)
    d = dist[hit]
    rng = np.random.default_rng([run.seed, 303, snapshot.tick])
    std = rng.uniform(*lidar.noise_std_range)
    if std > 0:
        d = d + rng.normal(scale=std, size=d.size)
    pts = nominal + lidar.directions[hit] * d[:, None]
    if lidar.quantum:
        decimals = int(round(-math.log10(lidar.quantum)))
        pts = np.round(pts, decimals)
    return pts


class World:
    """Mutable simulation state; only ``tick`` changes it."""

    def __init__(
        self,
        robot: RobotScript | None = None,
        workers: Sequence[WorkerScript] = (),
        static: Sequence[Cuboid] = (),
        obstacles: Sequence[ObstacleEvent] = (),
        lidar: LidarModel | None = None,
        seed: int = 0,
        dt: float = DT,
        segmentation_margin: float = 0.07,
    ):
        self.robot = robot
        self.workers = list(workers)
        self.static = tuple(static)
        self.obstacles = list(obstacles)
        self.lidar = lidar
        self.seed = seed
        self.dt = dt
        self.segmentation_margin = segmentation_margin
        self.tick_index = 0
        self.phase = 0.0
        self._schedules = [VisitSchedule(w, seed, i) for i, w in enumerate(self.workers)]
        self.lidar_run = LidarRun.sample(lidar, seed, dt) if lidar is not None else None
        self._link_pos = robot.positions(0.0) if robot else {}
        self._link_speed = {n: 0.0 for n in self._link_pos}
        self._history: deque[Snapshot] = deque(maxlen=(self.lidar_run.delay_ticks + 1) if self.lidar_run else 1)
        self._history.append(self._make_snapshot())

    @property
    def time(self) -> float:
        return self.tick_index * self.dt

    def worker_cuboids(self, t: float) -> tuple[Cuboid, ...]:
        out = []
        for w, sched in zip(self.workers, self._schedules):
            pos = sched.position(t)
            if pos is not None:
                out.append(Cuboid.from_center_size(pos, w.size))
        return tuple(out)

    def obstacle_cuboids(self, t: float) -> tuple[Cuboid, ...]:
        return tuple(o.cuboid for o in self.obstacles if o.spawn <= t < o.despawn)

    def _make_snapshot(self) -> Snapshot:
        t = self.time
        links = {}
        if self.robot is not None:
            links = {n: Cuboid.from_center_size(p, self.robot.sizes[n]) for n, p in self._link_pos.items()}
        return Snapshot(
            self.tick_index, t, self.static, links, dict(self._link_speed),
            self.worker_cuboids(t), self.obstacle_cuboids(t),
        )

    def snapshot(self) -> Snapshot:
        return self._history[-1]

    def tick(self, ratio: float = 1.0) -> None:
        """Advance one cycle; the robot's script phase moves by ratio * dt."""
        if not 0.0 <= ratio <= 1.0:
            raise ValueError("speed ratio must lie in [0, 1]")
        if self.robot is not None:
            new_phase = self.phase + ratio * self.dt
            new_pos = self.robot.positions(new_phase) if ratio > 0 else self._link_pos
            self._link_speed = {
                n: float(np.linalg.norm(new_pos[n] - self._link_pos[n])) / self.dt for n in new_pos
            }
            self._link_pos = new_pos
            self.phase = new_phase
        self.tick_index += 1
        self._history.append(self._make_snapshot())

    def scan(self) -> np.ndarray:
        if self.lidar is None or self.lidar_run is None:
            raise RuntimeError("world has no LiDAR")
        delayed = self._history[0]
        current = self._history[-1]
        # noise is keyed to the current tick even when the geometry is stale
        shown = Snapshot(current.tick, current.time, delayed.static, delayed.links, delayed.link_speeds,
                         delayed.workers, delayed.obstacles)
        return scan(shown, self.lidar, self.lidar_run)

    def robot_state(self, snapshot: Snapshot | None = None) -> RobotState:
        snap = snapshot or self.snapshot()
        return robot_state_from(snap.links, snap.link_speeds, self.robot.tool if self.robot else None,
                                self.segmentation_margin)


def robot_state_from(
    links: dict[str, Cuboid], speeds: dict[str, float], tool: str | None, margin: float
) -> RobotState:
    """Monitor view of the robot: inflated segmentation cuboids plus link sphere states."""
    body = tuple(c.inflated(margin) for n, c in links.items() if n != tool)
    tool_c = links[tool].inflated(margin) if tool is not None and tool in links else None
    states = tuple(LinkState(tuple(c.center), speeds.get(n, 0.0)) for n, c in links.items())
    return RobotState(body, tool_c, states)


# --- safety streams -------------------------------------------------------------


def external_voxels(cuboids: Sequence[Cuboid], config: MonitorConfig) -> np.ndarray:
    """Voxels whose centers lie inside external cuboids, minus known background."""
    centers = config.grid.all_centers
    mask = np.zeros(config.grid.n_voxels, dtype=bool)
    for c in cuboids:
        mask |= c.contains(centers)
    if config.background.size:
        mask[config.background] = False
    return np.flatnonzero(mask)


class GeometricStream(TimelineStream):
    """Fixed-zone decisions from exact worker/obstacle geometry, precomputed per tick.

    Skips LiDAR and segmentation: the predicted occupancy is the set of voxel
    centers inside external cuboids. Valid because workers and obstacles do
    not depend on the robot's speed; fixed zones do not depend on its pose.
    """

    def __init__(self, world: World, config: MonitorConfig, duration: float):
        if config.mode != "fixed":
            raise ValueError("the geometric stream supports fixed zones only")
        n = int(math.ceil(duration / world.dt - 1e-9))
        normal = SafetyDecision(0.0, 0.0, SpeedMode.NORMAL)
        cache: dict[tuple, SafetyDecision] = {}
        filt = ModeFilter(config.debounce_ticks)
        self.decisions: list[SafetyDecision] = []
        for k in range(n):
            t = k * world.dt
            cubs = world.worker_cuboids(t) + world.obstacle_cuboids(t)
            if not cubs:
                d = normal
            else:
                key = tuple((c.pose.translation, c.pose.quat, c.half_extents) for c in cubs)
                d = cache.get(key)
                if d is None:
                    d = cache[key] = evaluate_zones(external_voxels(cubs, config), RobotState(), config)
            self.decisions.append(filt(d))
        super().__init__([d.speed_ratio for d in self.decisions], world.dt)


class LiveStream:
    """Closed loop: scan, monitor, command the robot, tick the world; one tick at a time.

    Each tick's scan, motion state and decision can be streamed to sinks.
    With ``intervene=False`` the monitor still runs and logs, but the robot
    and scheduler always see ratio 1. Ticks at or past ``horizon`` are not
    simulated and report ratio 1; a cycle reaching them ends after the
    horizon whatever the ratio, so callers that drop such cycles lose nothing.
    """

    def __init__(
        self,
        world: World,
        config: MonitorConfig,
        intervene: bool = True,
        scan_sink=None,
        motion_sink=None,
        horizon: int | None = None,
    ):
        if world.lidar is None:
            raise ValueError("live monitoring needs a LiDAR model")
        self.world = world
        self.config = config
        self.intervene = intervene
        self.dt = world.dt
        self.decisions: list[SafetyDecision] = []
        self._filter = ModeFilter(config.debounce_ticks)
        self._scan_sink = scan_sink
        self._motion_sink = motion_sink
        self.horizon = horizon

    def _step(self) -> None:
        w = self.world
        k = w.tick_index
        snap = w.snapshot()
        pts = w.scan()
        state = w.robot_state(snap)
        if self._scan_sink is not None:
            self._scan_sink(ScanRecord(k, snap.time, pts))
        if self._motion_sink is not None:
            tool = w.robot.tool if w.robot else None
            self._motion_sink(MotionRecord.from_links(k, snap.time, snap.links, snap.link_speeds, tool))
        d = self._filter(monitor_tick(pts, state, self.config, k))
        self.decisions.append(d)
        w.tick(d.speed_ratio if self.intervene else 1.0)

    def run_until(self, tick: int) -> None:
        while len(self.decisions) <= tick:
            self._step()

    def run(self, tick: int) -> tuple[float, int]:
        if self.horizon is not None and tick >= self.horizon:
            return 1.0, FOREVER
        self.run_until(tick)
        return (self.decisions[tick].speed_ratio if self.intervene else 1.0), 1


def record_scans(world: World, duration: float, path=None, config: MonitorConfig | None = None,
                 motion_path=None) -> list[ScanRecord]:
    """Tick the world for ``duration`` seconds at full speed, recording one scan per tick.

    When a monitor config is given the robot is commanded by the monitor.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(math.ceil(duration / world.dt - 1e-9))
    scans: list[ScanRecord] = []
    motion: list[MotionRecord] = []
    stream = LiveStream(world, config or MonitorConfig(), intervene=config is not None,
                        scan_sink=scans.append, motion_sink=motion.append)
    stream.run_until(n - 1)
    if path is not None:
        write_scans(path, scans)
    if motion_path is not None:
        with JsonlWriter(motion_path) as w:
            for m in motion:
                w.write(m)
    return scans
