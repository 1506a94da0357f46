"""Voxel-based safety monitor: occupancy, zones, speed modes, SSM and PFL checks.

Voxel sets are 1-D sorted integer arrays of flat (C-order) indices into a
GridSpec. Labels follow the monitor's class convention:
0 empty, 1 obstacle, 2 robot, 3 tool.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Mapping, Protocol, Sequence

import numpy as np

from .geometry import Cuboid

EMPTY, OBSTACLE, ROBOT, TOOL = 0, 1, 2, 3

DEFAULT_THRESHOLD = 0.001
SLOWDOWN_RATIO = 0.7


class ZoneError(ValueError):
    """A safety zone does not overlap the monitoring grid."""


@dataclass(frozen=True)
class GridSpec:
    min_corner: tuple[float, float, float] = (-0.55, -1.35, 0.1)
    max_corner: tuple[float, float, float] = (0.35, 1.0, 1.75)
    voxel_size: float = 0.05

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.min_corner)
        hi = tuple(float(v) for v in self.max_corner)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("max_corner must exceed min_corner on every axis")

    @cached_property
    def shape(self) -> tuple[int, int, int]:
        ext = (np.asarray(self.max_corner) - np.asarray(self.min_corner)) / self.voxel_size
        nx, ny, nz = (int(v) for v in np.rint(ext))
        return nx, ny, nz

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.shape
        return nx * ny * nz

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.min_corner[axis] + (np.arange(self.shape[axis]) + 0.5) * self.voxel_size

    def ravel(self, ijk: np.ndarray) -> np.ndarray:
        ijk = np.atleast_2d(ijk)
        return np.ravel_multi_index((ijk[:, 0], ijk[:, 1], ijk[:, 2]), self.shape)

    def unravel(self, flat: np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat, dtype=np.int64), self.shape), axis=-1)

    def centers(self, flat: np.ndarray) -> np.ndarray:
        ijk = self.unravel(flat)
        return np.asarray(self.min_corner) + (ijk + 0.5) * self.voxel_size

    @cached_property
    def all_centers(self) -> np.ndarray:
        return self.centers(np.arange(self.n_voxels))


@dataclass
class LabeledVoxelGrid:
    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(self.spec.shape)
        if self.labels.max(initial=0) > TOOL:
            raise ValueError("labels must be in {0, 1, 2, 3}")

    @classmethod
    def empty(cls, spec: GridSpec) -> LabeledVoxelGrid:
        return cls(spec, np.zeros(spec.shape, dtype=np.uint8))

    def indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels.ravel() == label)


@dataclass(frozen=True)
class ZoneSpec:
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]
    kind: str = "stop"

    def __post_init__(self) -> None:
        if self.kind not in ("stop", "slowdown"):
            raise ValueError(f"unknown zone kind {self.kind!r}")
        object.__setattr__(self, "min_corner", tuple(float(v) for v in self.min_corner))
        object.__setattr__(self, "max_corner", tuple(float(v) for v in self.max_corner))

    def contains_footprint(self, other: ZoneSpec) -> bool:
        return all(
            self.min_corner[a] < other.min_corner[a] and self.max_corner[a] > other.max_corner[a]
            for a in (0, 1)
        )


DEFAULT_STOP_ZONE = ZoneSpec((-0.55, -1.0, 0.4), (0.35, 0.65, 1.15), "stop")


def slowdown_around(stop: ZoneSpec, width: float | Sequence[float] = 0.45, z_range: tuple[float, float] = (0.1, 1.75)) -> ZoneSpec:
    """Slowdown box extending ``width`` beyond the stop footprint.

    ``width`` is one value or four per-side values (-x, +x, -y, +y).
    """
    w = [float(width)] * 4 if np.isscalar(width) else [float(v) for v in width]
    lo = (stop.min_corner[0] - w[0], stop.min_corner[1] - w[2], z_range[0])
    hi = (stop.max_corner[0] + w[1], stop.max_corner[1] + w[3], z_range[1])
    return ZoneSpec(lo, hi, "slowdown")


DEFAULT_SLOWDOWN_ZONE = slowdown_around(DEFAULT_STOP_ZONE)


@dataclass(frozen=True)
class SsmParams:
    v_h: float = 2.0
    t_r: float = 0.1
    t_s: float = 0.01
    b: float = 0.005
    C: float = 0.21
    z_r: float = 0.001
    z_s: float = 0.05
    cycle_dt: float = 0.1

    def __post_init__(self) -> None:
        for name in ("v_h", "t_r", "t_s", "b", "C", "z_r", "z_s", "cycle_dt"):
            if getattr(self, name) < 0:
                raise ValueError(f"SSM parameter {name} must be non-negative")


class SpeedMode(enum.Enum):
    NORMAL = 1.0
    SLOWDOWN = SLOWDOWN_RATIO
    STOP = 0.0

    @property
    def ratio(self) -> float:
        return self.value

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class SafetyDecision:
    stop_ratio: float
    slowdown_ratio: float
    mode: SpeedMode

    @property
    def speed_ratio(self) -> float:
        return self.mode.ratio


@dataclass(frozen=True)
class LinkState:
    position: tuple[float, float, float]
    speed: float = 0.0
    kinetic_energy: float = 0.0

    def __post_init__(self) -> None:
        if self.speed < 0 or self.kinetic_energy < 0:
            raise ValueError("speed and kinetic energy must be non-negative")


@dataclass(frozen=True)
class EnergyLimitTable:
    limits: Mapping[str, float] = field(
        default_factory=lambda: {
            "Head (Face)": 0.11,
            "Hand": 0.49,
            "Lower Arm": 1.30,
            "Upper Arm": 1.50,
            "Torso (Chest)": 1.60,
        }
    )

    def __post_init__(self) -> None:
        if any(v <= 0 for v in self.limits.values()):
            raise ValueError("energy limits must be positive")


# --- occupancy ---------------------------------------------------------------


def voxelize(points: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Flat indices of voxels containing at least one point (half-open cells)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.size == 0:
        return np.empty(0, dtype=np.int64)
    ijk = np.floor((pts - np.asarray(spec.min_corner)) / spec.voxel_size).astype(np.int64)
    inside = np.all((ijk >= 0) & (ijk < np.asarray(spec.shape)), axis=1)
    if not inside.any():
        return np.empty(0, dtype=np.int64)
    return np.unique(spec.ravel(ijk[inside]))


def segment(
    occupied: np.ndarray,
    spec: GridSpec,
    robot_cuboids: Sequence[Cuboid],
    tool_cuboid: Cuboid | None,
) -> LabeledVoxelGrid:
    """Label occupied voxels by center membership; tool beats robot beats obstacle."""
    labels = np.zeros(spec.n_voxels, dtype=np.uint8)
    occupied = np.asarray(occupied, dtype=np.int64)
    if occupied.size:
        centers = spec.centers(occupied)
        lab = np.full(occupied.size, OBSTACLE, dtype=np.uint8)
        for c in robot_cuboids:
            lab[c.contains(centers)] = ROBOT
        if tool_cuboid is not None:
            lab[tool_cuboid.contains(centers)] = TOOL
        labels[occupied] = lab
    return LabeledVoxelGrid(spec, labels)


def baseline_predict(grid: LabeledVoxelGrid) -> np.ndarray:
    return grid.indices(OBSTACLE)


class OccupancyPredictor(Protocol):
    def __call__(self, grid: LabeledVoxelGrid, robot_state: object = None, tick: int = 0) -> np.ndarray: ...


class BaselinePredictor:
    """Geometric stand-in for the learned occupancy model."""

    def __call__(self, grid: LabeledVoxelGrid, robot_state: object = None, tick: int = 0) -> np.ndarray:
        return baseline_predict(grid)

    def __repr__(self) -> str:
        return "BaselinePredictor()"


@dataclass(frozen=True)
class NoisyPredictor:
    """Drops true voxels with ``fn_rate`` and adds empty ones with ``fp_rate``.

    Randomness is keyed on (seed, tick) so a replay of the same tick sees the
    same errors.
    """

    base: OccupancyPredictor
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.fp_rate <= 1.0 and 0.0 <= self.fn_rate <= 1.0):
            raise ValueError("rates must lie in [0, 1]")

    def __call__(self, grid: LabeledVoxelGrid, robot_state: object = None, tick: int = 0) -> np.ndarray:
        pred = np.asarray(self.base(grid, robot_state, tick), dtype=np.int64)
        if self.fp_rate == 0.0 and self.fn_rate == 0.0:
            return pred
        rng = np.random.default_rng([self.seed, tick])
        keep = rng.random(pred.size) >= self.fn_rate
        pred = pred[keep]
        empty_mask = grid.labels.ravel() == EMPTY
        empty_mask[pred] = False
        candidates = np.flatnonzero(empty_mask)
        added = candidates[rng.random(candidates.size) < self.fp_rate]
        return np.union1d(pred, added)


def noisy_predict(base: OccupancyPredictor, fp_rate: float, fn_rate: float, seed: int) -> NoisyPredictor:
    return NoisyPredictor(base, fp_rate, fn_rate, seed)


@lru_cache(maxsize=64)
def zone_mask(spec: GridSpec, zone: ZoneSpec) -> np.ndarray:
    """Boolean mask over flat voxels whose centers lie in the zone (inclusive)."""
    axes = []
    for a in range(3):
        c = spec.axis_centers(a)
        axes.append((c >= zone.min_corner[a]) & (c <= zone.max_corner[a]))
    mask = axes[0][:, None, None] & axes[1][None, :, None] & axes[2][None, None, :]
    mask = mask.ravel()
    mask.flags.writeable = False
    return mask


def zone_voxel_count(spec: GridSpec, zone: ZoneSpec) -> int:
    return int(zone_mask(spec, zone).sum())


def occupancy_ratio(predicted: np.ndarray, spec: GridSpec, zone: ZoneSpec) -> float:
    mask = zone_mask(spec, zone)
    total = int(mask.sum())
    if total == 0:
        raise ZoneError(f"{zone.kind} zone {zone.min_corner}..{zone.max_corner} has no voxels in the grid")
    predicted = np.asarray(predicted, dtype=np.int64)
    return int(mask[predicted].sum()) / total


def decide_mode(stop_ratio: float, slowdown_ratio: float, threshold: float = DEFAULT_THRESHOLD) -> SpeedMode:
    if stop_ratio > threshold:
        return SpeedMode.STOP
    if slowdown_ratio > threshold:
        return SpeedMode.SLOWDOWN
    return SpeedMode.NORMAL


# --- speed and separation monitoring ------------------------------------------


def protective_distance(p: SsmParams, v_r: float) -> float:
    if v_r < 0:
        raise ValueError("robot speed must be non-negative")
    return p.v_h * (p.t_r + p.t_s) + v_r * p.t_r + p.b + p.C + p.z_r + p.z_s


def sphere_mask(points: np.ndarray, links: Sequence[LinkState], p: SsmParams) -> np.ndarray:
    """True for points within any link's protective sphere (inclusive)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    hit = np.zeros(len(points), dtype=bool)
    for link in links:
        r = protective_distance(p, link.speed)
        d2 = np.sum((points - np.asarray(link.position)) ** 2, axis=1)
        hit |= d2 <= r * r
    return hit


def dynamic_zone_decide(
    links: Sequence[LinkState],
    p: SsmParams,
    predicted: np.ndarray,
    spec: GridSpec,
    slowdown: ZoneSpec,
    threshold: float = DEFAULT_THRESHOLD,
) -> SafetyDecision:
    """Stop if any predicted voxel center falls inside a link sphere.

    ``stop_ratio`` reports the occupied share of sphere-covered voxels; the
    stop itself does not wait for that share to cross the threshold.
    """
    if not links:
        raise ValueError("at least one link is required")
    predicted = np.asarray(predicted, dtype=np.int64)
    slow = occupancy_ratio(predicted, spec, slowdown)
    if predicted.size == 0:
        return SafetyDecision(0.0, slow, decide_mode(0.0, slow, threshold))
    inside = sphere_mask(spec.centers(predicted), links, p)
    n_inside = int(inside.sum())
    covered = int(sphere_mask(spec.all_centers, links, p).sum())
    stop = n_inside / covered if covered else float(n_inside > 0)
    if n_inside > 0:
        return SafetyDecision(stop, slow, SpeedMode.STOP)
    return SafetyDecision(stop, slow, decide_mode(0.0, slow, threshold))


# --- power and force limiting -------------------------------------------------


@dataclass(frozen=True)
class EnergyRow:
    arm: str
    region: str
    limit: float
    energy: float
    ratio: float

    @property
    def safe(self) -> bool:
        return self.ratio <= 1.0

    @property
    def status(self) -> str:
        return "Safe" if self.safe else "Unsafe"


def kinetic_report(arms: Mapping[str, float], limits: EnergyLimitTable | None = None) -> list[EnergyRow]:
    """Safety ratio T_r / T_limit for every (arm, body region) pair."""
    limits = limits or EnergyLimitTable()
    rows = []
    for arm, energy in arms.items():
        if energy < 0 or math.isnan(energy):
            raise ValueError(f"kinetic energy for {arm!r} must be non-negative")
        for region, limit in limits.limits.items():
            rows.append(EnergyRow(arm, region, limit, energy, energy / limit))
    return rows


# --- the per-tick monitor -------------------------------------------------------


@dataclass(frozen=True)
class RobotState:
    """Robot geometry as the monitor sees it at one tick.

    ``links`` and ``tool`` are segmentation cuboids (already inflated to cover
    the body); ``link_states`` carry the sphere centers and speeds.
    """

    links: tuple[Cuboid, ...] = ()
    tool: Cuboid | None = None
    link_states: tuple[LinkState, ...] = ()


def background_voxels(spec: GridSpec, static_cuboids: Sequence[Cuboid], margin: float = 0.0) -> np.ndarray:
    """Voxels whose centers fall inside known static geometry (table, fixtures)."""
    centers = spec.all_centers
    mask = np.zeros(spec.n_voxels, dtype=bool)
    for c in static_cuboids:
        mask |= c.inflated(margin).contains(centers) if margin > 0 else c.contains(centers)
    return np.flatnonzero(mask)


@dataclass
class MonitorConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    stop_zone: ZoneSpec = DEFAULT_STOP_ZONE
    slowdown_zone: ZoneSpec = DEFAULT_SLOWDOWN_ZONE
    ssm: SsmParams = field(default_factory=SsmParams)
    mode: str = "fixed"
    threshold: float = DEFAULT_THRESHOLD
    predictor: OccupancyPredictor = field(default_factory=BaselinePredictor)
    static_cuboids: tuple[Cuboid, ...] = ()
    background_margin: float = 0.07
    debounce_ticks: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("fixed", "dynamic"):
            raise ValueError(f"unknown monitor mode {self.mode!r}")
        if self.debounce_ticks < 0:
            raise ValueError("debounce_ticks must be non-negative")
        self.background = background_voxels(self.grid, self.static_cuboids, self.background_margin)


def predict_obstacles(scan: np.ndarray, robot_state: RobotState, config: MonitorConfig, tick: int = 0) -> np.ndarray:
    occupied = voxelize(scan, config.grid)
    grid = segment(occupied, config.grid, robot_state.links, robot_state.tool)
    predicted = np.asarray(config.predictor(grid, robot_state, tick), dtype=np.int64)
    if config.background.size:
        predicted = np.setdiff1d(predicted, config.background, assume_unique=True)
    return predicted


def evaluate_zones(predicted: np.ndarray, robot_state: RobotState, config: MonitorConfig) -> SafetyDecision:
    if config.mode == "dynamic":
        return dynamic_zone_decide(
            robot_state.link_states, config.ssm, predicted, config.grid, config.slowdown_zone, config.threshold
        )
    stop = occupancy_ratio(predicted, config.grid, config.stop_zone)
    slow = occupancy_ratio(predicted, config.grid, config.slowdown_zone)
    return SafetyDecision(stop, slow, decide_mode(stop, slow, config.threshold))


def monitor_tick(scan: np.ndarray, robot_state: RobotState, config: MonitorConfig, tick: int = 0) -> SafetyDecision:
    """voxelize -> segment -> predict -> zone evaluation -> speed mode."""
    return evaluate_zones(predict_obstacles(scan, robot_state, config, tick), robot_state, config)


class ModeFilter:
    """Optional debounce: a faster mode is adopted only after ``window``
    consecutive ticks asking for it; slower modes apply immediately."""

    def __init__(self, window: int = 0):
        self.window = window
        self._current: SpeedMode | None = None
        self._pending = 0

    def __call__(self, decision: SafetyDecision) -> SafetyDecision:
        mode = decision.mode
        if self._current is None or self.window == 0 or mode.ratio <= self._current.ratio:
            self._current, self._pending = mode, 0
            return decision
        self._pending += 1
        if self._pending > self.window:
            self._current, self._pending = mode, 0
            return decision
        return SafetyDecision(decision.stop_ratio, decision.slowdown_ratio, self._current)
