"""JSON scenario files: parsing, validation, and construction of worlds and monitors.

All units are SI; ranges are [lo, hi] pairs. See README for the schema.
Errors carry the JSON field path and, where it can be located, the line.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .geometry import Cuboid, Pose
from .safety import (
    DEFAULT_SLOWDOWN_ZONE,
    DEFAULT_STOP_ZONE,
    BaselinePredictor,
    GridSpec,
    MonitorConfig,
    NoisyPredictor,
    SsmParams,
    ZoneSpec,
    slowdown_around,
    zone_voxel_count,
)
from .scheduler import FailureInjection, FailurePolicy, TaskGraph, TaskNode, soldering_graph, validate
from .timing import DT
from .world import (
    Keyframe,
    LidarModel,
    ObstacleEvent,
    ObstacleRandomization,
    RobotScript,
    World,
    WorkerScript,
    spawn_random_obstacle,
)


class ScenarioError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None, source: str | None = None):
        where = path or "<root>"
        if line is not None:
            where = f"line {line}: {where}"
        if source:
            where = f"{source}: {where}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


@dataclass
class RandomObstacles:
    count: int = 0
    window: tuple[float, float] = (0.0, 0.0)
    lifetime: tuple[float, float] = (5.0, 30.0)
    spec: ObstacleRandomization = field(default_factory=ObstacleRandomization)


@dataclass
class Scenario:
    seed: int
    duration: float
    dt: float = DT
    grid: GridSpec = field(default_factory=GridSpec)
    stop_zone: ZoneSpec | None = None
    slowdown_zone: ZoneSpec | None = None
    ssm: SsmParams = field(default_factory=SsmParams)
    mode: str = "fixed"
    threshold: float = 0.001
    source: str = "geometric"
    debounce_ticks: int = 0
    background_margin: float = 0.07
    segmentation_margin: float = 0.07
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    static: tuple[Cuboid, ...] = ()
    robot: RobotScript | None = None
    operating_height: tuple[float, float] | None = (0.9, 1.2)
    workers: tuple[WorkerScript, ...] = ()
    obstacles: tuple[ObstacleEvent, ...] = ()
    random_obstacles: RandomObstacles = field(default_factory=RandomObstacles)
    lidar: LidarModel | None = None
    graph: TaskGraph = field(default_factory=soldering_graph)
    injection: FailureInjection = field(default_factory=FailureInjection)
    alert_delay: float = 60.0
    energy: dict[str, float] = field(default_factory=dict)

    def monitor_config(self) -> MonitorConfig:
        predictor = BaselinePredictor()
        if self.fp_rate or self.fn_rate:
            predictor = NoisyPredictor(BaselinePredictor(), self.fp_rate, self.fn_rate, self.seed)
        kw: dict[str, Any] = {}
        if self.stop_zone is not None:
            kw["stop_zone"] = self.stop_zone
        if self.slowdown_zone is not None:
            kw["slowdown_zone"] = self.slowdown_zone
        return MonitorConfig(
            grid=self.grid, ssm=self.ssm, mode=self.mode, threshold=self.threshold, predictor=predictor,
            static_cuboids=self.static, background_margin=self.background_margin,
            debounce_ticks=self.debounce_ticks, **kw,
        )

    def obstacle_events(self, seed: int | None = None) -> list[ObstacleEvent]:
        seed = self.seed if seed is None else seed
        events = list(self.obstacles)
        ro = self.random_obstacles
        rng = np.random.default_rng([seed, 404])
        for i in range(ro.count):
            spawn = float(rng.uniform(*ro.window))
            life = float(rng.uniform(*ro.lifetime))
            events.append(ObstacleEvent(spawn, spawn + life, spawn_random_obstacle(ro.spec, [seed, 405, i])))
        return events

    def build_world(self, seed: int | None = None, with_lidar: bool = True) -> World:
        seed = self.seed if seed is None else seed
        return World(
            robot=self.robot, workers=self.workers, static=self.static, obstacles=self.obstacle_events(seed),
            lidar=self.lidar if with_lidar else None, seed=seed, dt=self.dt,
            segmentation_margin=self.segmentation_margin,
        )


# --- parsing helpers ------------------------------------------------------------


class _Ctx:
    def __init__(self, text: str | None, source: str | None):
        self.text = text
        self.source = source

    def line_of(self, path: str) -> int | None:
        if not self.text:
            return None
        keys = re.findall(r"[A-Za-z_][A-Za-z0-9_]*", path)
        if not keys:
            return None
        pos = 0
        # walk the path keys in order so nested names resolve to the right occurrence
        for k in keys:
            m = re.compile(r'"%s"\s*:' % re.escape(k)).search(self.text, pos)
            if m is None:
                break
            pos = m.start()
        return self.text.count("\n", 0, pos) + 1 if pos else None

    def error(self, message: str, path: str) -> ScenarioError:
        return ScenarioError(message, path, self.line_of(path), self.source)


def _num(ctx: _Ctx, v: Any, path: str, *, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ctx.error(f"expected a finite number, got {v!r}", path)
    if positive and v <= 0:
        raise ctx.error(f"must be > 0, got {v}", path)
    if nonneg and v < 0:
        raise ctx.error(f"must be >= 0, got {v}", path)
    return float(v)


def _vec(ctx: _Ctx, v: Any, path: str, n: int = 3, **kw: bool) -> tuple[float, ...]:
    if not isinstance(v, list) or len(v) != n:
        raise ctx.error(f"expected a list of {n} numbers", path)
    return tuple(_num(ctx, x, f"{path}[{i}]", **kw) for i, x in enumerate(v))


def _range(ctx: _Ctx, v: Any, path: str, **kw: bool) -> tuple[float, float]:
    lo, hi = _vec(ctx, v, path, 2, **kw)
    if hi < lo:
        raise ctx.error(f"range [lo, hi] has hi < lo ({lo}, {hi})", path)
    return lo, hi


def _obj(ctx: _Ctx, v: Any, path: str, allowed: set[str]) -> dict:
    if not isinstance(v, dict):
        raise ctx.error("expected an object", path)
    unknown = set(v) - allowed
    if unknown:
        raise ctx.error(f"unknown field(s) {sorted(unknown)}", path)
    return v


def _box(ctx: _Ctx, v: Any, path: str) -> tuple[tuple[float, ...], tuple[float, ...]]:
    d = _obj(ctx, v, path, {"min", "max"})
    lo, hi = _vec(ctx, d.get("min"), f"{path}.min"), _vec(ctx, d.get("max"), f"{path}.max")
    if any(h <= l for l, h in zip(lo, hi)):
        raise ctx.error("max must exceed min on every axis", path)
    return lo, hi


def _cuboid(ctx: _Ctx, v: Any, path: str, extra: set[str] = frozenset()) -> Cuboid:
    d = _obj(ctx, v, path, {"name", "center", "size", "rpy_deg", "exterior"} | set(extra))
    center = _vec(ctx, d.get("center"), f"{path}.center")
    size = _vec(ctx, d.get("size"), f"{path}.size", positive=True)
    rpy = _vec(ctx, d.get("rpy_deg", [0, 0, 0]), f"{path}.rpy_deg")
    quat = Pose.from_rpy(*np.radians(rpy)).quat
    return Cuboid.from_center_size(center, size, quat)


# --- sections -----------------------------------------------------------------

_TOP = {"seed", "duration", "dt", "grid", "zones", "ssm", "monitor", "static", "robot", "workers", "obstacles",
        "lidar", "tasks", "failure_injection", "alert_delay", "energy", "description"}


def _parse(raw: Any, ctx: _Ctx) -> Scenario:
    d = _obj(ctx, raw, "", _TOP)
    if "seed" not in d:
        raise ctx.error("a seed is required", "seed")
    seed = d["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ctx.error("seed must be a non-negative integer", "seed")
    sc = Scenario(seed=seed, duration=_num(ctx, d.get("duration", 3600.0), "duration", positive=True))
    sc.dt = _num(ctx, d.get("dt", DT), "dt", positive=True)
    sc.alert_delay = _num(ctx, d.get("alert_delay", 60.0), "alert_delay", nonneg=True)
    if "description" in d and not isinstance(d["description"], str):
        raise ctx.error("description must be a string", "description")

    if "grid" in d:
        g = _obj(ctx, d["grid"], "grid", {"min", "max", "voxel_size"})
        lo, hi = _box(ctx, {"min": g.get("min"), "max": g.get("max")}, "grid")
        sc.grid = GridSpec(lo, hi, _num(ctx, g.get("voxel_size", 0.05), "grid.voxel_size", positive=True))

    _parse_zones(d.get("zones", {}), ctx, sc)

    if "ssm" in d:
        s = _obj(ctx, d["ssm"], "ssm", {"v_h", "t_r", "t_s", "b", "C", "z_r", "z_s", "cycle_dt"})
        sc.ssm = SsmParams(**{k: _num(ctx, v, f"ssm.{k}", nonneg=True) for k, v in s.items()})

    m = _obj(ctx, d.get("monitor", {}), "monitor", {
        "mode", "threshold", "source", "debounce_ticks", "background_margin", "segmentation_margin",
        "fp_rate", "fn_rate"})
    sc.mode = m.get("mode", "fixed")
    if sc.mode not in ("fixed", "dynamic"):
        raise ctx.error(f"unknown mode {sc.mode!r} (fixed | dynamic)", "monitor.mode")
    sc.source = m.get("source", "geometric")
    if sc.source not in ("geometric", "lidar"):
        raise ctx.error(f"unknown source {sc.source!r} (geometric | lidar)", "monitor.source")
    sc.threshold = _num(ctx, m.get("threshold", 0.001), "monitor.threshold", nonneg=True)
    db = m.get("debounce_ticks", 0)
    if isinstance(db, bool) or not isinstance(db, int) or db < 0:
        raise ctx.error("debounce_ticks must be a non-negative integer", "monitor.debounce_ticks")
    sc.debounce_ticks = db
    sc.background_margin = _num(ctx, m.get("background_margin", 0.07), "monitor.background_margin", nonneg=True)
    sc.segmentation_margin = _num(ctx, m.get("segmentation_margin", 0.07), "monitor.segmentation_margin",
                                  nonneg=True)
    for k in ("fp_rate", "fn_rate"):
        v = _num(ctx, m.get(k, 0.0), f"monitor.{k}", nonneg=True)
        if v > 1:
            raise ctx.error("rate must lie in [0, 1]", f"monitor.{k}")
        setattr(sc, k, v)

    static = d.get("static", [])
    if not isinstance(static, list):
        raise ctx.error("expected a list", "static")
    sc.static = tuple(_cuboid(ctx, c, f"static[{i}]") for i, c in enumerate(static))
    for i, (raw_c, c) in enumerate(zip(static, sc.static)):
        _check_in_grid(ctx, raw_c, c, sc.grid, f"static[{i}]")

    if "robot" in d:
        _parse_robot(d["robot"], ctx, sc)
    _parse_workers(d.get("workers", []), ctx, sc)
    _parse_obstacles(d.get("obstacles", {}), ctx, sc)
    if "lidar" in d:
        _parse_lidar(d["lidar"], ctx, sc)
    if sc.source == "lidar" and sc.lidar is None:
        raise ctx.error("monitor.source 'lidar' needs a lidar section", "monitor.source")
    if sc.mode == "dynamic" and sc.source != "lidar":
        raise ctx.error("dynamic zones need monitor.source 'lidar'", "monitor.mode")

    sc.graph = _parse_tasks(d.get("tasks", {"builtin": "soldering"}), ctx)
    fi = _obj(ctx, d.get("failure_injection", {}), "failure_injection", {"premature_success_prob"})
    q = _num(ctx, fi.get("premature_success_prob", 0.0), "failure_injection.premature_success_prob", nonneg=True)
    if q > 1:
        raise ctx.error("probability must lie in [0, 1]", "failure_injection.premature_success_prob")
    sc.injection = FailureInjection(q)

    en = _obj(ctx, d.get("energy", {}), "energy", set(d.get("energy", {})) if isinstance(d.get("energy"), dict) else set())
    sc.energy = {k: _num(ctx, v, f"energy.{k}", nonneg=True) for k, v in en.items()}
    return sc


def _parse_zones(z: Any, ctx: _Ctx, sc: Scenario) -> None:
    z = _obj(ctx, z, "zones", {"stop", "slowdown"})
    stop = None
    if "stop" in z:
        lo, hi = _box(ctx, z["stop"], "zones.stop")
        stop = ZoneSpec(lo, hi, "stop")
    sc.stop_zone = stop
    base_stop = stop or DEFAULT_STOP_ZONE
    if "slowdown" in z:
        s = z["slowdown"]
        if isinstance(s, dict) and "width" in s:
            s = _obj(ctx, s, "zones.slowdown", {"width", "z_range"})
            w = s["width"]
            width = (_num(ctx, w, "zones.slowdown.width", nonneg=True) if not isinstance(w, list)
                     else _vec(ctx, w, "zones.slowdown.width", 4, nonneg=True))
            zr = _range(ctx, s.get("z_range", [0.1, 1.75]), "zones.slowdown.z_range")
            sc.slowdown_zone = slowdown_around(base_stop, width, zr)
        else:
            lo, hi = _box(ctx, s, "zones.slowdown")
            sc.slowdown_zone = ZoneSpec(lo, hi, "slowdown")
    slow = sc.slowdown_zone or DEFAULT_SLOWDOWN_ZONE
    for name, zone in (("stop", base_stop), ("slowdown", slow)):
        if zone_voxel_count(sc.grid, zone) == 0:
            raise ctx.error("zone contains no voxel centers of the monitoring grid", f"zones.{name}")
    if not slow.contains_footprint(base_stop):
        raise ctx.error("slowdown zone must contain the stop zone's footprint", "zones.slowdown")


def _check_in_grid(ctx: _Ctx, raw: dict, c: Cuboid, grid: GridSpec, path: str) -> None:
    if raw.get("exterior"):
        return
    lo, hi = c.bounds()
    if np.any(hi < np.asarray(grid.min_corner)) or np.any(lo > np.asarray(grid.max_corner)):
        raise ctx.error("region lies outside the monitoring grid (set \"exterior\": true if intended)", path)


def _parse_robot(r: Any, ctx: _Ctx, sc: Scenario) -> None:
    r = _obj(ctx, r, "robot", {"links", "tool", "keyframes", "operating_height"})
    links = _obj(ctx, r.get("links"), "robot.links", set(r.get("links") or {}))
    if not links:
        raise ctx.error("at least one link is required", "robot.links")
    sizes = {n: _vec(ctx, v, f"robot.links.{n}", positive=True) for n, v in links.items()}
    kfs_raw = r.get("keyframes")
    if not isinstance(kfs_raw, list) or not kfs_raw:
        raise ctx.error("expected a non-empty list", "robot.keyframes")
    kfs = []
    for i, k in enumerate(kfs_raw):
        p = f"robot.keyframes[{i}]"
        k = _obj(ctx, k, p, {"t", "positions"})
        pos = _obj(ctx, k.get("positions"), f"{p}.positions", set(sizes))
        kfs.append(Keyframe(_num(ctx, k.get("t"), f"{p}.t", nonneg=True),
                            {n: _vec(ctx, v, f"{p}.positions.{n}") for n, v in pos.items()}))
    tool = r.get("tool")
    try:
        sc.robot = RobotScript(sizes, kfs, tool)
    except ValueError as exc:
        raise ctx.error(str(exc), "robot.keyframes") from None
    oh = r.get("operating_height", [0.9, 1.2])
    sc.operating_height = None if oh is None else _range(ctx, oh, "robot.operating_height")
    if sc.operating_height is not None and tool is not None:
        lo, hi = sc.operating_height
        z = sc.robot.keyframe_heights(tool)
        bad = np.flatnonzero((z <= lo) | (z >= hi))
        if bad.size:
            i = int(bad[0])
            raise ctx.error(f"tool height {z[i]} m outside the operating band ({lo}, {hi})",
                            f"robot.keyframes[{i}].positions.{tool}")


def _parse_workers(ws: Any, ctx: _Ctx, sc: Scenario) -> None:
    if not isinstance(ws, list):
        raise ctx.error("expected a list", "workers")
    out = []
    for i, w in enumerate(ws):
        p = f"workers[{i}]"
        w = _obj(ctx, w, p, {"name", "size", "waypoints", "period", "first_visit"})
        size = _vec(ctx, w.get("size"), f"{p}.size", positive=True)
        wps = w.get("waypoints")
        if not isinstance(wps, list) or len(wps) < 2:
            raise ctx.error("expected at least two [t, [x, y, z]] waypoints", f"{p}.waypoints")
        pts = []
        for j, wp in enumerate(wps):
            if not isinstance(wp, list) or len(wp) != 2:
                raise ctx.error("expected [t, [x, y, z]]", f"{p}.waypoints[{j}]")
            pts.append((_num(ctx, wp[0], f"{p}.waypoints[{j}][0]", nonneg=True),
                        _vec(ctx, wp[1], f"{p}.waypoints[{j}][1]")))
        per = w.get("period")
        period = (_range(ctx, per, f"{p}.period", positive=True) if isinstance(per, list)
                  else _num(ctx, per, f"{p}.period", positive=True))
        try:
            out.append(WorkerScript(w.get("name", f"worker{i}"), size, pts, period,
                                    _num(ctx, w.get("first_visit", 0.0), f"{p}.first_visit", nonneg=True)))
        except ValueError as exc:
            raise ctx.error(str(exc), f"{p}.waypoints") from None
    sc.workers = tuple(out)


def _parse_obstacles(o: Any, ctx: _Ctx, sc: Scenario) -> None:
    o = _obj(ctx, o, "obstacles", {"scripted", "random"})
    events = []
    for i, e in enumerate(o.get("scripted", [])):
        p = f"obstacles.scripted[{i}]"
        c = _cuboid(ctx, e, p, {"spawn", "despawn"})
        spawn = _num(ctx, e.get("spawn", 0.0), f"{p}.spawn", nonneg=True)
        despawn = _num(ctx, e["despawn"], f"{p}.despawn") if "despawn" in e else math.inf
        if despawn <= spawn:
            raise ctx.error("despawn must come after spawn", f"{p}.despawn")
        _check_in_grid(ctx, e, c, sc.grid, p)
        events.append(ObstacleEvent(spawn, despawn, c))
    sc.obstacles = tuple(events)
    if "random" in o:
        p = "obstacles.random"
        r = _obj(ctx, o["random"], p, {"count", "window", "lifetime", "size", "position"})
        count = r.get("count", 0)
        if isinstance(count, bool) or not isinstance(count, int) or count < 0:
            raise ctx.error("count must be a non-negative integer", f"{p}.count")
        base = ObstacleRandomization()
        size = tuple(_range(ctx, v, f"{p}.size[{i}]", nonneg=True) for i, v in enumerate(r["size"])) \
            if "size" in r else base.size
        pos = tuple(_range(ctx, v, f"{p}.position[{i}]") for i, v in enumerate(r["position"])) \
            if "position" in r else base.position
        if len(size) != 3 or len(pos) != 3:
            raise ctx.error("size and position need three [lo, hi] ranges", p)
        sc.random_obstacles = RandomObstacles(
            count, _range(ctx, r.get("window", [0.0, sc.duration]), f"{p}.window", nonneg=True),
            _range(ctx, r.get("lifetime", [5.0, 30.0]), f"{p}.lifetime", positive=True),
            ObstacleRandomization(size, pos),
        )


def _parse_lidar(l: Any, ctx: _Ctx, sc: Scenario) -> None:
    p = "lidar"
    l = _obj(ctx, l, p, {"mount", "azimuth_deg", "elevation_deg", "spacing_deg", "max_range", "noise_std",
                         "drift", "delay", "quantum"})
    kw: dict[str, Any] = {}
    if "mount" in l:
        m = _obj(ctx, l["mount"], f"{p}.mount", {"position", "rpy_deg"})
        pos = _vec(ctx, m.get("position"), f"{p}.mount.position")
        rpy = _vec(ctx, m.get("rpy_deg", [0, 0, 0]), f"{p}.mount.rpy_deg")
        kw["mount"] = Pose.from_rpy(*np.radians(rpy), pos)
    for key, attr, opts in (("azimuth_deg", "azimuth_deg", {}), ("elevation_deg", "elevation_deg", {}),
                            ("noise_std", "noise_std_range", {"nonneg": True}), ("drift", "drift_range", {}),
                            ("delay", "delay_range", {"nonneg": True})):
        if key in l:
            kw[attr] = _range(ctx, l[key], f"{p}.{key}", **opts)
    for key in ("spacing_deg", "max_range"):
        if key in l:
            kw[key] = _num(ctx, l[key], f"{p}.{key}", positive=True)
    if "quantum" in l:
        kw["quantum"] = _num(ctx, l["quantum"], f"{p}.quantum", nonneg=True)
    sc.lidar = LidarModel(**kw)


def _parse_tasks(t: Any, ctx: _Ctx) -> TaskGraph:
    p = "tasks"
    t = _obj(ctx, t, p, {"builtin", "insert_retry", "entry", "terminal", "nodes"})
    if "builtin" in t:
        if t["builtin"] != "soldering":
            raise ctx.error(f"unknown builtin graph {t['builtin']!r}", f"{p}.builtin")
        graph = soldering_graph(int(t.get("insert_retry", 3)))
    else:
        nodes = []
        for i, n in enumerate(t.get("nodes", [])):
            q = f"{p}.nodes[{i}]"
            n = _obj(ctx, n, q, {"id", "controller", "on_success", "on_failure", "params"})
            if not isinstance(n.get("id"), str):
                raise ctx.error("node id must be a string", f"{q}.id")
            try:
                policy = FailurePolicy.parse(n.get("on_failure", "abort_cycle"))
            except (ValueError, TypeError) as exc:
                raise ctx.error(str(exc), f"{q}.on_failure") from None
            params = n.get("params", {})
            if not isinstance(params, dict):
                raise ctx.error("params must be an object", f"{q}.params")
            nodes.append(TaskNode(n["id"], n.get("controller", ""), n.get("on_success"), policy, dict(params)))
        graph = TaskGraph.from_nodes(nodes, t.get("entry", ""), t.get("terminal", ""))
    errors = validate(graph)
    if errors:
        raise ctx.error("; ".join(errors), p)
    return graph


def graph_to_dict(graph: TaskGraph) -> dict:
    """Inverse of the explicit ``tasks`` section."""
    return {
        "entry": graph.entry,
        "terminal": graph.terminal,
        "nodes": [
            {"id": n.id, "controller": n.controller, "on_success": n.on_success,
             "on_failure": str(n.on_failure), "params": n.params}
            for n in graph.nodes.values()
        ],
    }


# --- entry points -------------------------------------------------------------


def parse_scenario(data: dict | str, source: str | None = None) -> Scenario:
    text = data if isinstance(data, str) else None
    if text is not None:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON ({exc.msg}, column {exc.colno})", "", exc.lineno, source) from None
    ctx = _Ctx(text, source)
    try:
        return _parse(data, ctx)
    except ScenarioError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(str(exc), "", None, source) from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario ({exc.strerror})", "", None, str(path)) from None
    return parse_scenario(text, str(path))


def bundled_path(name: str) -> Path:
    """Path of a scenario shipped in the package data directory."""
    p = resources.files("cellsim") / "data" / name
    return Path(str(p))


def load_bundled(name: str) -> Scenario:
    return load_scenario(bundled_path(name))
