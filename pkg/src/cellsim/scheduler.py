"""Finite-state task scheduler.

Nodes bind a controller primitive; success edges sequence the workflow and a
per-node fallback policy handles failures. Controllers run logically at speed
ratio 1 and report nominal time, which is then played out against the safety
stream to obtain wall time, paused time and slowed time.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from . import controllers as ctl
from .geometry import Pose
from .timing import SafetyStream, advance, tick_of

CONTROLLERS = ("servo", "policy", "waypoint", "human")
FAILURE_KINDS = ("retry", "operator_alert", "abort_cycle")


@dataclass(frozen=True)
class FailurePolicy:
    kind: str = "abort_cycle"
    count: int = 0
    target: str | None = None

    @classmethod
    def parse(cls, spec: str | dict | FailurePolicy) -> FailurePolicy:
        """Accepts ``"retry(3)"``, ``"operator_alert"``, ``"abort_cycle"`` or a dict."""
        if isinstance(spec, FailurePolicy):
            return spec
        if isinstance(spec, dict):
            return cls(spec.get("kind", "abort_cycle"), int(spec.get("count", 0)), spec.get("target"))
        s = spec.strip()
        if s.startswith("retry(") and s.endswith(")"):
            return cls("retry", int(s[6:-1]))
        return cls(s)

    def __str__(self) -> str:
        return f"retry({self.count})" if self.kind == "retry" else self.kind


@dataclass
class TaskNode:
    id: str
    controller: str
    on_success: str | None = None
    on_failure: FailurePolicy = field(default_factory=FailurePolicy)
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class TaskGraph:
    nodes: dict[str, TaskNode]
    entry: str
    terminal: str

    @classmethod
    def from_nodes(cls, nodes: Iterable[TaskNode], entry: str, terminal: str) -> TaskGraph:
        return cls({n.id: n for n in nodes}, entry, terminal)


@dataclass(frozen=True)
class FailureInjection:
    premature_success_prob: float = 0.0


@dataclass
class NodeEvent:
    cycle: int
    node: str
    start_tick: int
    end_tick: int
    outcome: str
    retries: int
    start_time: float
    end_time: float
    nominal: float
    controller_retries: int = 0


@dataclass
class CycleRecord:
    index: int
    start_time: float
    nominal_time: float
    wall_time: float
    paused_time: float
    slowed_time: float
    alert_time: float = 0.0
    retries: dict[str, int] = field(default_factory=dict)
    controller_retries: dict[str, int] = field(default_factory=dict)
    operations: int = 0
    failed_operations: int = 0
    outcome: str = "pass"
    failed_node: str | None = None

    @property
    def end_time(self) -> float:
        return self.start_time + self.wall_time


class GraphError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def validate(graph: TaskGraph) -> list[str]:
    """All structural problems with the graph; empty when it is runnable."""
    errors: list[str] = []
    nodes = graph.nodes
    for name, where in ((graph.entry, "entry"), (graph.terminal, "terminal")):
        if name not in nodes:
            errors.append(f"{where} node {name!r} does not exist")
    for n in nodes.values():
        if n.controller not in CONTROLLERS:
            errors.append(f"node {n.id!r}: unknown controller {n.controller!r}")
        if n.on_success is not None and n.on_success not in nodes:
            errors.append(f"node {n.id!r}: on_success -> missing node {n.on_success!r}")
        if n.on_success is None and n.id != graph.terminal:
            errors.append(f"node {n.id!r}: no on_success edge and not terminal")
        if n.id == graph.terminal and n.on_success is not None:
            errors.append(f"terminal node {n.id!r} must not have an on_success edge")
        fp = n.on_failure
        if fp.kind not in FAILURE_KINDS:
            errors.append(f"node {n.id!r}: unknown failure policy {fp.kind!r}")
        elif fp.kind == "retry":
            if fp.target is not None and fp.target not in nodes:
                errors.append(f"node {n.id!r}: retry target {fp.target!r} does not exist")
            if fp.count < 1:
                errors.append(f"node {n.id!r}: zero-progress failure loop (retry({fp.count}) has no budget)")
    if errors:
        return errors

    # success path must reach the terminal without looping
    seen: set[str] = set()
    cur: str | None = graph.entry
    while cur is not None and cur != graph.terminal:
        if cur in seen:
            errors.append(f"zero-progress cycle on success edges at node {cur!r}")
            break
        seen.add(cur)
        cur = nodes[cur].on_success
    reachable = {graph.entry}
    stack = [graph.entry]
    while stack:
        n = nodes[stack.pop()]
        for nxt in (n.on_success, n.on_failure.target):
            if nxt is not None and nxt not in reachable:
                reachable.add(nxt)
                stack.append(nxt)
    for name in nodes:
        if name not in reachable:
            errors.append(f"node {name!r} is unreachable from entry {graph.entry!r}")
    return errors


def _spread_pose(rng: np.random.Generator, pos: float, rot_deg: float) -> Pose:
    return Pose.from_rotvec(ctl._ball(rng, math.radians(rot_deg)), tuple(ctl._ball(rng, pos)))


def execute_node(node: TaskNode, rng: np.random.Generator, injection: FailureInjection = FailureInjection()) -> ctl.ControllerOutcome:
    """Run a node's controller logically; ``elapsed`` is nominal seconds."""
    p = node.params
    base = float(p.get("base_time", 0.0))
    timeout = p.get("timeout", ctl.DEFAULT_TIMEOUT)
    if p.get("fail_probability", 0.0) and rng.random() < p["fail_probability"]:
        return ctl.ControllerOutcome(ctl.Status.FAILED, 1, base, {"reason": p.get("fail_reason", "anomaly")})

    if node.controller in ("waypoint", "human"):
        durations = p.get("durations") or [p.get("duration", 0.0)]
        total = float(sum(durations))
        return ctl.ControllerOutcome(ctl.Status.SUCCEEDED, len(durations), base + total, {})

    if node.controller == "servo":
        target = Pose()
        start = target @ _spread_pose(rng, p.get("start_pos_spread", 0.03), p.get("start_rot_spread_deg", 10.0))
        oracle = ctl.ServoOracle(
            target,
            pos_noise=p.get("pos_noise", 0.001),
            rot_noise_deg=p.get("rot_noise_deg", 0.2),
            bias=tuple(p.get("bias", (0.0, 0.0, 0.0))),
            noise=p.get("noise", "ball"),
            lost_probability=p.get("lost_probability", 0.0),
            seed=int(rng.integers(2**63)),
        )
        out, _ = ctl.servo_run(
            start, oracle,
            pos_tol=p.get("pos_tol", 0.005), rot_tol_deg=p.get("rot_tol_deg", 0.5),
            max_iters=p.get("max_iters", 20), step_time=p.get("step_time", 1.0), timeout=timeout,
        )
        out.elapsed += base
        return out

    if node.controller == "policy":
        hole = ctl.sample_hole_target(
            rng, (0.0, 0.0, 0.0), p.get("hole_radius", 0.012), p.get("sector_deg", 60.0), p.get("radial_range", 0.004)
        )
        nominal_hole = np.array([p.get("hole_radius", 0.012) + p.get("radial_range", 0.004) / 2, 0.0, 0.0])
        start = nominal_hole + np.array([0.0, 0.0, p.get("approach_height", 0.012)])
        emu = ctl.PolicyEmulator(
            target=tuple(hole), start=tuple(start),
            chunk_size=p.get("chunk_size", 5), step_scale=p.get("step_scale", 0.001),
            success_threshold=p.get("success_threshold", 0.95),
        )
        premature = bool(p.get("operation")) and injection.premature_success_prob > 0 and rng.random() < injection.premature_success_prob
        if premature:
            emu.premature_distance = emu.chunk_size * emu.step_scale + 0.001
        load = ctl.LoadCellModel(stuck_probability=p.get("stuck_probability", 0.0), seed=int(rng.integers(2**63)))
        out = ctl.insert_with_retry(
            emu, load,
            retract_range=tuple(p.get("retract_range", (0.0025, 0.004))),
            max_retries=p.get("max_retries", 5),
            step_dt=p.get("step_dt", 0.1), retry_time=p.get("retry_time", 1.0), timeout=timeout,
        )
        out.elapsed += base
        if out.succeeded:
            out.diagnostics["seated"] = out.diagnostics["final_distance"] <= p.get("seat_tolerance", 0.0005)
        out.diagnostics["premature_injected"] = premature
        return out

    raise ValueError(f"unknown controller {node.controller!r}")


def run_cycle(
    graph: TaskGraph,
    stream: SafetyStream,
    seed: int,
    *,
    cycle_index: int = 0,
    start_time: float = 0.0,
    injection: FailureInjection = FailureInjection(),
    alert_delay: float = 60.0,
    events: list[NodeEvent] | None = None,
) -> CycleRecord:
    """Execute one pass through the graph starting at wall time ``start_time``."""
    rng = np.random.default_rng([seed, cycle_index])
    dt = stream.dt
    t = start_time
    node_id: str | None = graph.entry
    retries: dict[str, int] = defaultdict(int)
    ctrl_retries: dict[str, int] = defaultdict(int)
    alerts: dict[str, int] = defaultdict(int)
    nominal = paused = slowed = alert_time = 0.0
    ops = failed_ops = 0
    outcome, failed_node = "pass", None

    while node_id is not None:
        node = graph.nodes[node_id]
        out = execute_node(node, rng, injection)
        adv = advance(stream, t, out.elapsed)
        nominal += out.elapsed
        paused += adv.paused
        slowed += adv.slowed
        n_ctrl = int(out.diagnostics.get("retries", 0))
        ctrl_retries[node_id] += n_ctrl
        if events is not None:
            events.append(NodeEvent(
                cycle_index, node_id, tick_of(t, dt), tick_of(adv.end, dt), out.status.value,
                retries[node_id], t, adv.end, out.elapsed, n_ctrl,
            ))
        t = adv.end

        if out.succeeded:
            if node.params.get("operation"):
                ops += 1
                if not out.diagnostics.get("seated", True):
                    failed_ops += 1
                    outcome = "fail"
                    failed_node = failed_node or node_id
            node_id = node.on_success
            continue

        policy = node.on_failure
        if policy.kind == "retry" and retries[node_id] < policy.count:
            retries[node_id] += 1
            node_id = policy.target or node_id
        elif policy.kind == "operator_alert" and alerts[node_id] == 0:
            alerts[node_id] += 1
            t += alert_delay
            alert_time += alert_delay
        else:
            if node.params.get("operation"):
                ops += 1
                failed_ops += 1
            outcome, failed_node = "fail", node_id
            break

    return CycleRecord(
        index=cycle_index,
        start_time=start_time,
        nominal_time=nominal,
        wall_time=t - start_time,
        paused_time=paused,
        slowed_time=slowed,
        alert_time=alert_time,
        retries={k: v for k, v in retries.items() if v},
        controller_retries={k: v for k, v in ctrl_retries.items() if v},
        operations=ops,
        failed_operations=failed_ops,
        outcome=outcome,
        failed_node=failed_node,
    )


def run_shift(
    graph: TaskGraph,
    stream: SafetyStream,
    duration: float,
    seed: int,
    *,
    injection: FailureInjection = FailureInjection(),
    alert_delay: float = 60.0,
    events: list[NodeEvent] | None = None,
) -> list[CycleRecord]:
    """Back-to-back cycles until ``duration``; an unfinished final cycle is dropped."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    errors = validate(graph)
    if errors:
        raise GraphError(errors)
    records: list[CycleRecord] = []
    t = 0.0
    while True:
        cycle_events: list[NodeEvent] = []
        rec = run_cycle(
            graph, stream, seed, cycle_index=len(records), start_time=t,
            injection=injection, alert_delay=alert_delay, events=cycle_events,
        )
        if rec.end_time > duration + 1e-9:
            break
        records.append(rec)
        if events is not None:
            events.extend(cycle_events)
        t = rec.end_time
    return records


# --- the soldering cell workflow ----------------------------------------------

# Declared split of the 159 s nominal cycle; learned-controller time is
# added on top of base_time and the waypoint segments absorb the remainder.
def soldering_graph(insert_retry: int = 3) -> TaskGraph:
    nodes = [
        TaskNode("load", "waypoint", "grasp", params={"durations": [8.0, 8.0]}),
        TaskNode("grasp", "servo", "place", FailurePolicy("retry", 2), {
            "base_time": 5.0, "step_time": 2.0, "pos_noise": 0.001, "rot_noise_deg": 0.2,
            "start_pos_spread": 0.03, "start_rot_spread_deg": 10.0, "max_iters": 10,
        }),
        TaskNode("place", "waypoint", "insert_1", params={"durations": [6.0, 6.0]}),
    ]
    for k in (1, 2, 3):
        nxt_insert = f"insert_{k + 1}" if k < 3 else "tip_clean"
        nodes.append(TaskNode(f"insert_{k}", "policy", f"solder_{k}", FailurePolicy("retry", insert_retry), {
            "operation": True, "base_time": 13.5, "step_dt": 0.1, "chunk_size": 5, "step_scale": 0.001,
            "stuck_probability": 0.05, "retry_time": 1.0, "max_retries": 5,
        }))
        nodes.append(TaskNode(f"solder_{k}", "policy", nxt_insert, FailurePolicy("retry", 2), {
            "base_time": 16.5, "step_dt": 0.1, "chunk_size": 5, "step_scale": 0.002, "approach_height": 0.01,
        }))
    nodes += [
        TaskNode("tip_clean", "waypoint", "unload", FailurePolicy("operator_alert"), {"durations": [8.0, 5.0]}),
        TaskNode("unload", "waypoint", None, params={"durations": [6.0, 6.0]}),
    ]
    return TaskGraph.from_nodes(nodes, "load", "unload")
