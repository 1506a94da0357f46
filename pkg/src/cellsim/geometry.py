"""Rigid transforms, cuboids and ray queries.

Conventions:
    - A Pose maps points from its local frame into the parent frame:
      p_parent = R @ p_local + t.
    - Rotations are unit quaternions (w, x, y, z), Hamilton product.
    - Lengths in meters, angles in radians unless a name ends in ``_deg``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]


def _qmul(a: Quat, b: Quat) -> Quat:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return (
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def _qnormalize(q: Sequence[float]) -> Quat:
    n = math.sqrt(sum(c * c for c in q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    w, x, y, z = (c / n for c in q)
    return (w, x, y, z)


def _qmatrix(q: Quat) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _qrotate(q: Quat, v: Sequence[float]) -> Vec3:
    w, x, y, z = q
    vx, vy, vz = v
    # t = 2 q_vec x v ; v' = v + w t + q_vec x t
    tx = 2 * (y * vz - z * vy)
    ty = 2 * (z * vx - x * vz)
    tz = 2 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def _vec3(v: Iterable[float]) -> Vec3:
    x, y, z = (float(c) for c in v)
    return (x, y, z)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: unit quaternion rotation plus translation (m)."""

    quat: Quat = (1.0, 0.0, 0.0, 0.0)
    translation: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "quat", _qnormalize(self.quat))
        object.__setattr__(self, "translation", _vec3(self.translation))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> Pose:
        return cls(translation=(x, y, z))

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float], translation: Sequence[float] = (0.0, 0.0, 0.0)) -> Pose:
        rx, ry, rz = (float(c) for c in rotvec)
        angle = math.sqrt(rx * rx + ry * ry + rz * rz)
        if angle < 1e-15:
            return cls(translation=_vec3(translation))
        s = math.sin(angle / 2) / angle
        return cls((math.cos(angle / 2), rx * s, ry * s, rz * s), _vec3(translation))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> Pose:
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        return cls.from_rotvec(a * angle, translation)

    @classmethod
    def from_rpy(cls, roll: float, pitch: float, yaw: float, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> Pose:
        """Extrinsic x-y-z (roll, pitch, yaw), i.e. R = Rz(yaw) Ry(pitch) Rx(roll)."""
        qx = (math.cos(roll / 2), math.sin(roll / 2), 0.0, 0.0)
        qy = (math.cos(pitch / 2), 0.0, math.sin(pitch / 2), 0.0)
        qz = (math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2))
        return cls(_qmul(qz, _qmul(qy, qx)), _vec3(translation))

    @property
    def rotation(self) -> np.ndarray:
        return _qmatrix(self.quat)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def inverse(self) -> Pose:
        return inverse(self)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map local points (..., 3) into the parent frame."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.t

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map parent-frame points (..., 3) into the local frame."""
        return (np.asarray(points, dtype=float) - self.t) @ self.rotation

    def rotvec(self) -> np.ndarray:
        w, x, y, z = self.quat
        if w < 0:
            w, x, y, z = -w, -x, -y, -z
        s = math.sqrt(x * x + y * y + z * z)
        if s < 1e-15:
            return np.zeros(3)
        angle = 2.0 * math.atan2(s, w)
        return np.array([x, y, z]) * (angle / s)

    def isclose(self, other: Pose, tol: float = 1e-9) -> bool:
        dq = max(abs(a - b) for a, b in zip(self.quat, other.quat))
        dq_neg = max(abs(a + b) for a, b in zip(self.quat, other.quat))
        dt = max(abs(a - b) for a, b in zip(self.translation, other.translation))
        return min(dq, dq_neg) <= tol and dt <= tol


def compose(a: Pose, b: Pose) -> Pose:
    """a ∘ b: apply b, then a."""
    ra = _qrotate(a.quat, b.translation)
    t = (ra[0] + a.translation[0], ra[1] + a.translation[1], ra[2] + a.translation[2])
    return Pose(_qmul(a.quat, b.quat), t)


def inverse(p: Pose) -> Pose:
    w, x, y, z = p.quat
    qi = (w, -x, -y, -z)
    t = _qrotate(qi, p.translation)
    return Pose(qi, (-t[0], -t[1], -t[2]))


@dataclass(frozen=True)
class RelativeMotion:
    """A displacement expressed in the frame of the moving body."""

    delta: Pose

    @classmethod
    def identity(cls) -> RelativeMotion:
        return cls(Pose.identity())


def relative(a: Pose, b: Pose) -> RelativeMotion:
    """Motion taking ``a`` to ``b`` in a's own frame: compose(a, delta) == b."""
    return RelativeMotion(compose(inverse(a), b))


def rotation_angle(q: Quat) -> float:
    """Rotation angle in [0, pi] of a unit quaternion."""
    w, x, y, z = q
    s = math.sqrt(x * x + y * y + z * z)
    return 2.0 * math.atan2(s, abs(w))


def motion_norms(m: RelativeMotion) -> tuple[float, float]:
    """(translation norm in m, rotation angle in degrees)."""
    tx, ty, tz = m.delta.translation
    return math.sqrt(tx * tx + ty * ty + tz * tz), math.degrees(rotation_angle(m.delta.quat))


@dataclass(frozen=True)
class Cuboid:
    pose: Pose
    half_extents: Vec3

    def __post_init__(self) -> None:
        he = _vec3(self.half_extents)
        if min(he) <= 0:
            raise ValueError(f"half extents must be positive, got {he}")
        object.__setattr__(self, "half_extents", he)

    @classmethod
    def from_bounds(cls, lo: Sequence[float], hi: Sequence[float]) -> Cuboid:
        lo_a, hi_a = np.asarray(lo, float), np.asarray(hi, float)
        return cls(Pose(translation=tuple((lo_a + hi_a) / 2)), tuple((hi_a - lo_a) / 2))

    @classmethod
    def from_center_size(cls, center: Sequence[float], size: Sequence[float], quat: Quat = (1.0, 0.0, 0.0, 0.0)) -> Cuboid:
        return cls(Pose(quat, _vec3(center)), tuple(np.asarray(size, float) / 2))

    @property
    def center(self) -> np.ndarray:
        return self.pose.t

    def inflated(self, margin: float) -> Cuboid:
        return Cuboid(self.pose, tuple(h + margin for h in self.half_extents))

    def moved_to(self, center: Sequence[float]) -> Cuboid:
        return Cuboid(Pose(self.pose.quat, _vec3(center)), self.half_extents)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boundary-inclusive membership for an (N, 3) array."""
        local = self.pose.apply_inverse(np.atleast_2d(points))
        return np.all(np.abs(local) <= np.asarray(self.half_extents), axis=-1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """World-frame axis-aligned bounding box."""
        r = np.abs(self.pose.rotation) @ np.asarray(self.half_extents)
        return self.center - r, self.center + r


def point_in_cuboid(p: Sequence[float], c: Cuboid) -> bool:
    local = c.pose.apply_inverse(np.asarray(p, dtype=float))
    return bool(np.all(np.abs(local) <= np.asarray(c.half_extents)))


@dataclass(frozen=True)
class Ray:
    origin: Vec3
    direction: Vec3

    def __post_init__(self) -> None:
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("ray direction must be nonzero")
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "direction", _vec3(d / n))

    def at(self, s: float) -> np.ndarray:
        return np.asarray(self.origin) + s * np.asarray(self.direction)


def ray_cuboid_intersect(r: Ray, c: Cuboid) -> float | None:
    """Distance to the first entry point, 0 if the origin is inside, None on a miss."""
    d = cast_rays(np.asarray([r.origin]), np.asarray([r.direction]), [c])[0]
    return None if math.isinf(d) else float(d)


def cast_rays(origins: np.ndarray, directions: np.ndarray, cuboids: Sequence[Cuboid]) -> np.ndarray:
    """Nearest hit distance per ray over all cuboids (slab method); inf on miss.

    ``origins`` may be (3,) for a shared origin or (N, 3).
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    origins = np.asarray(origins, dtype=float)
    shared = origins.ndim == 1
    best = np.full(len(directions), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for c in cuboids:
            rot = c.pose.rotation
            o = ((origins - c.pose.t) @ rot).T
            d = (directions @ rot).T
            tmin = np.full(len(directions), -np.inf)
            tmax = np.full(len(directions), np.inf)
            miss = np.zeros(len(directions), dtype=bool)
            for ax in range(3):
                h = c.half_extents[ax]
                oa = o[ax] if not shared else np.broadcast_to(o[ax], d[ax].shape)
                da = d[ax]
                t1 = (-h - oa) / da
                t2 = (h - oa) / da
                parallel = np.abs(da) < 1e-15
                miss |= parallel & (np.abs(oa) > h)
                lo = np.where(parallel, -np.inf, np.minimum(t1, t2))
                hi = np.where(parallel, np.inf, np.maximum(t1, t2))
                np.maximum(tmin, lo, out=tmin)
                np.minimum(tmax, hi, out=tmax)
            entry = np.maximum(tmin, 0.0)
            hit = (tmax >= entry) & ~miss
            best = np.where(hit & (entry < best), entry, best)
    return best
