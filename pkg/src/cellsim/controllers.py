"""Controller primitives with explicit termination and success signals.

Learned behaviours are stood in for by oracles with injectable error:
``ServoOracle`` for the visual-servoing network and ``PolicyEmulator`` for the
chunked insertion/soldering policy with its success head. Elapsed times are
nominal seconds (speed ratio 1); the scheduler dilates them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .geometry import Pose, RelativeMotion, compose, motion_norms, relative
from .timing import ConstantStream, SafetyStream, advance

DEFAULT_TIMEOUT = 20.0


class Status(enum.Enum):
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


@dataclass
class ControllerOutcome:
    status: Status
    iterations: int = 0
    elapsed: float = 0.0
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.elapsed < 0:
            raise ValueError("elapsed must be non-negative")

    @property
    def succeeded(self) -> bool:
        return self.status is Status.SUCCEEDED

    @property
    def terminal(self) -> bool:
        return self.status is not Status.RUNNING


class TargetLost(RuntimeError):
    pass


def _ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    """Uniform sample from a 3-ball."""
    if radius <= 0:
        return np.zeros(3)
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return v * radius * rng.random() ** (1.0 / 3.0)


@dataclass
class ServoOracle:
    """Returns current^-1 * target, corrupted by bias plus bounded or Gaussian noise.

    ``noise="ball"`` draws errors uniformly inside balls of radius ``pos_noise``
    (m) and ``rot_noise_deg``; ``"gaussian"`` treats them as per-axis stds.
    """

    target: Pose
    pos_noise: float = 0.0
    rot_noise_deg: float = 0.0
    bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise: str = "ball"
    lost_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise not in ("ball", "gaussian"):
            raise ValueError(f"unknown noise model {self.noise!r}")
        self._rng = np.random.default_rng(self.seed)

    def _draw(self, scale: float) -> np.ndarray:
        if self.noise == "ball":
            return _ball(self._rng, scale)
        return self._rng.normal(scale=scale, size=3) if scale > 0 else np.zeros(3)

    def observe(self, current: Pose) -> RelativeMotion:
        if self.lost_probability and self._rng.random() < self.lost_probability:
            raise TargetLost("target not visible")
        exact = relative(current, self.target).delta
        dp = self._draw(self.pos_noise) + np.asarray(self.bias)
        dr = self._draw(math.radians(self.rot_noise_deg))
        noisy = compose(exact, Pose.from_rotvec(dr))
        return RelativeMotion(Pose(noisy.quat, tuple(exact.t + dp)))


def servo_run(
    start: Pose,
    oracle: ServoOracle,
    pos_tol: float = 0.005,
    rot_tol_deg: float = 0.5,
    max_iters: int = 20,
    step_time: float = 1.0,
    timeout: float | None = DEFAULT_TIMEOUT,
    actuation_bias: Sequence[float] = (0.0, 0.0, 0.0),
) -> tuple[ControllerOutcome, Pose]:
    """Iterative closed-loop servoing.

    Each iteration observes a corrective motion; if both its norms are below
    tolerance the servo has converged, otherwise the robot moves by it.

    ``actuation_bias`` is a translation (m, tool frame) added to every executed
    motion, an uncompensated calibration error. Unlike an observation bias,
    which the loop absorbs by converging to an offset pose, it keeps every
    later observation at least its own length away from zero.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    current = start
    pos_n = rot_n = math.nan
    for i in range(1, max_iters + 1):
        elapsed = i * step_time
        try:
            action = oracle.observe(current)
        except TargetLost as exc:
            return ControllerOutcome(Status.FAILED, i, elapsed, {"reason": str(exc)}), current
        pos_n, rot_n = motion_norms(action)
        diag = {"pos_norm": pos_n, "rot_norm_deg": rot_n}
        if pos_n < pos_tol and rot_n < rot_tol_deg:
            return ControllerOutcome(Status.SUCCEEDED, i, elapsed, diag), current
        if timeout is not None and elapsed >= timeout:
            return ControllerOutcome(Status.FAILED, i, elapsed, {**diag, "reason": "timeout"}), current
        current = compose(current, action.delta)
        if any(actuation_bias):
            current = compose(current, Pose.from_translation(*actuation_bias))
    diag = {"pos_norm": pos_n, "rot_norm_deg": rot_n, "reason": "max_iters"}
    return ControllerOutcome(Status.FAILED, max_iters, max_iters * step_time, diag), current


@dataclass
class PolicyEmulator:
    """Straight-line stand-in for the chunked imitation policy.

    Actions are relative translations capped at ``step_scale``. The success
    head is a logistic in distance-to-target; ``premature_distance`` makes it
    misfire (report 1.0) anywhere within that distance.
    """

    target: tuple[float, float, float]
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    chunk_size: int = 5
    step_scale: float = 0.001
    success_threshold: float = 0.95
    success_midpoint: float = 0.001
    success_width: float = 0.0002
    premature_distance: float | None = None

    def __post_init__(self) -> None:
        if self.chunk_size < 1 or self.step_scale <= 0 or self.success_width <= 0:
            raise ValueError("chunk_size, step_scale and success_width must be positive")
        if not 0.0 < self.success_threshold < 1.0:
            raise ValueError("success_threshold must lie in (0, 1)")

    def success_prob(self, distance: float) -> float:
        if self.premature_distance is not None and distance <= self.premature_distance:
            return 1.0
        z = (distance - self.success_midpoint) / self.success_width
        if z > 700:
            return 0.0
        return 1.0 / (1.0 + math.exp(z))


def policy_step(state: Sequence[float], emu: PolicyEmulator) -> tuple[np.ndarray, float]:
    """One inference: a (chunk_size, 3) chunk of relative translations and the success probability."""
    pos = np.asarray(state, dtype=float).copy()
    target = np.asarray(emu.target, dtype=float)
    prob = emu.success_prob(float(np.linalg.norm(target - pos)))
    actions = np.zeros((emu.chunk_size, 3))
    for k in range(emu.chunk_size):
        delta = target - pos
        d = np.linalg.norm(delta)
        step = delta if d <= emu.step_scale else delta * (emu.step_scale / d)
        actions[k] = step
        pos = pos + step
    return actions, prob


@dataclass
class LoadCellModel:
    """Per-descent jam model: each insertion attempt jams with ``stuck_probability``.

    A jam shows up as a force above ``force_threshold`` once the cable tip is
    within ``jam_distance`` of the seat.
    """

    stuck_probability: float = 0.0
    force_threshold: float = 5.0
    jam_distance: float = 0.0015
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.stuck_probability <= 1.0:
            raise ValueError("stuck_probability must lie in [0, 1]")

    def descend(self, rng: np.random.Generator) -> float:
        """Peak force (N) the coming descent will produce near the seat."""
        jammed = rng.random() < self.stuck_probability
        return self.force_threshold * (1.5 if jammed else 0.3)

    def is_stuck(self, force: float) -> bool:
        return force > self.force_threshold


def insert_with_retry(
    emu: PolicyEmulator,
    load: LoadCellModel | None = None,
    retract_range: tuple[float, float] = (0.0025, 0.004),
    max_retries: int | None = 5,
    step_dt: float = 0.1,
    retry_time: float = 1.0,
    timeout: float | None = DEFAULT_TIMEOUT,
    max_inferences: int = 10_000,
) -> ControllerOutcome:
    """Run the policy until its success head exceeds the threshold.

    On a load-cell jam the cable is retracted straight up by a uniform draw
    from ``retract_range`` and the insertion resumes. ``max_retries=None``
    means unlimited.
    """
    if max_retries is not None and max_retries < 0:
        raise ValueError("max_retries must be >= 0")
    load = load or LoadCellModel()
    rng = np.random.default_rng(load.seed)
    target = np.asarray(emu.target, dtype=float)
    state = np.asarray(emu.start, dtype=float).copy()
    retries = steps = 0
    elapsed = 0.0
    retractions: list[float] = []
    force = load.descend(rng)
    for inference in range(1, max_inferences + 1):
        actions, prob = policy_step(state, emu)
        if prob > emu.success_threshold:
            return ControllerOutcome(
                Status.SUCCEEDED,
                inference,
                elapsed,
                {
                    "success_prob": prob,
                    "final_distance": float(np.linalg.norm(target - state)),
                    "retries": retries,
                    "retractions": retractions,
                    "steps": steps,
                },
            )
        for a in actions:
            state = state + a
            steps += 1
            elapsed += step_dt
            if load.is_stuck(force) and np.linalg.norm(target - state) <= load.jam_distance:
                if max_retries is not None and retries >= max_retries:
                    return ControllerOutcome(
                        Status.FAILED, inference, elapsed,
                        {"reason": "stuck", "retries": retries, "retractions": retractions, "success_prob": prob},
                    )
                r = float(rng.uniform(*retract_range))
                retractions.append(r)
                state = state + np.array([0.0, 0.0, r])
                retries += 1
                elapsed += retry_time
                force = load.descend(rng)
                break
        if timeout is not None and elapsed > timeout:
            return ControllerOutcome(
                Status.FAILED, inference, elapsed,
                {"reason": "timeout", "retries": retries, "retractions": retractions, "success_prob": prob},
            )
    return ControllerOutcome(Status.FAILED, max_inferences, elapsed, {"reason": "max_inferences", "retries": retries})


def waypoint_execute(
    waypoints: Sequence[tuple[Pose, float]],
    stream: SafetyStream | None = None,
    start: float = 0.0,
) -> ControllerOutcome:
    """Deterministic playback of taught segments; time dilates with the speed ratio."""
    if not waypoints:
        raise ValueError("at least one waypoint is required")
    nominal = 0.0
    for _, duration in waypoints:
        if duration <= 0:
            raise ValueError("waypoint durations must be positive")
        nominal += duration
    adv = advance(stream or ConstantStream(), start, nominal)
    return ControllerOutcome(
        Status.SUCCEEDED,
        len(waypoints),
        adv.end - start,
        {"nominal": nominal, "paused": adv.paused, "slowed": adv.slowed, "final_pose": waypoints[-1][0]},
    )


def sample_hole_target(
    rng: np.random.Generator,
    center: Sequence[float],
    radius: float = 0.012,
    sector_deg: float = 60.0,
    radial_range: float = 0.004,
    heading_deg: float = 0.0,
) -> np.ndarray:
    """Hole position inside an angular sector and radial band around the motor axis."""
    ang = math.radians(heading_deg + rng.uniform(-sector_deg / 2, sector_deg / 2))
    r = radius + rng.uniform(0.0, radial_range)
    c = np.asarray(center, dtype=float)
    return c + np.array([r * math.cos(ang), r * math.sin(ang), 0.0])
