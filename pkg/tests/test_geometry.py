import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellsim.geometry import (
    Cuboid,
    Pose,
    Ray,
    RelativeMotion,
    cast_rays,
    compose,
    inverse,
    motion_norms,
    point_in_cuboid,
    ray_cuboid_intersect,
    relative,
)

from oracles import march_ray

rotz90 = Pose.from_axis_angle((0, 0, 1), math.pi / 2)


def random_pose(rng):
    q = rng.normal(size=4)
    return Pose(tuple(q / np.linalg.norm(q)), tuple(rng.uniform(-2, 2, 3)))


finite = st.floats(-3, 3, allow_nan=False)
poses = st.builds(
    lambda q, t: Pose(q, t),
    st.tuples(*[st.floats(-1, 1)] * 4).filter(lambda q: sum(v * v for v in q) > 1e-3),
    st.tuples(finite, finite, finite),
)


class TestPose:
    def test_identity_compose(self):
        assert compose(Pose.identity(), Pose.identity()).isclose(Pose.identity())

    def test_pure_translations(self):
        p = compose(Pose.from_translation(1, 0, 0), Pose.from_translation(0, 2, 0))
        assert np.allclose(p.t, (1, 2, 0)) and np.allclose(p.rotation, np.eye(3))

    def test_rotation_then_translation(self):
        p = compose(rotz90, Pose.from_translation(1, 0, 0))
        assert np.allclose(p.t, (0, 1, 0), atol=1e-12)
        assert np.allclose(p.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)

    @given(poses)
    def test_rotation_is_proper(self, p):
        R = p.rotation
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(R) - 1) < 1e-9

    @given(poses)
    def test_identity_and_inverse(self, p):
        assert compose(p, Pose.identity()).isclose(p)
        assert compose(p, inverse(p)).isclose(Pose.identity())

    @given(poses, poses, poses)
    def test_associative(self, a, b, c):
        assert compose(compose(a, b), c).isclose(compose(a, compose(b, c)), 1e-8)

    def test_quaternion_sign_is_irrelevant(self):
        p = random_pose(np.random.default_rng(0))
        q = Pose(tuple(-v for v in p.quat), p.translation)
        assert p.isclose(q)


class TestRelative:
    def test_self_is_identity(self):
        p = random_pose(np.random.default_rng(1))
        assert relative(p, p).delta.isclose(Pose.identity())

    def test_from_identity(self):
        m = relative(Pose.identity(), Pose.from_translation(0.1, 0, 0))
        assert np.allclose(m.delta.t, (0.1, 0, 0))

    def test_expressed_in_moving_frame(self):
        a = Pose(rotz90.quat, (1, 0, 0))
        b = Pose(rotz90.quat, (1, 1, 0))
        m = relative(a, b)
        # world +y seen from a frame yawed by 90 degrees is local +x
        assert np.allclose(m.delta.t, (1, 0, 0), atol=1e-12)
        assert compose(a, m.delta).isclose(b)

    def test_round_trip_10k(self):
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            a, b = random_pose(rng), random_pose(rng)
            assert compose(a, relative(a, b).delta).isclose(b, 1e-9)


class TestMotionNorms:
    def test_identity(self):
        assert motion_norms(RelativeMotion.identity()) == (0.0, 0.0)

    def test_three_four_five(self):
        pos, rot = motion_norms(RelativeMotion(Pose.from_translation(0.003, 0.004, 0)))
        assert pos == pytest.approx(0.005, abs=1e-15) and rot == 0.0

    def test_half_degree(self):
        pos, rot = motion_norms(RelativeMotion(Pose.from_axis_angle((0, 0, 1), math.radians(0.5))))
        assert pos == 0.0 and rot == pytest.approx(0.5, abs=1e-9)

    def test_angle_independent_of_axis(self):
        rng = np.random.default_rng(3)
        for angle in rng.uniform(0, math.pi, 50):
            axes = rng.normal(size=(5, 3))
            norms = [motion_norms(RelativeMotion(Pose.from_axis_angle(ax, angle)))[1] for ax in axes]
            assert np.ptp(norms) < 1e-9
            assert norms[0] == pytest.approx(math.degrees(angle), abs=1e-9)

    @given(poses)
    def test_ranges(self, p):
        pos, rot = motion_norms(RelativeMotion(p))
        assert pos >= 0 and 0 <= rot <= 180 + 1e-9


class TestCuboid:
    box = Cuboid(Pose.identity(), (0.5, 0.5, 0.5))

    def test_center_and_corner_inside(self):
        assert point_in_cuboid((0, 0, 0), self.box)
        assert point_in_cuboid((0.5, 0.5, 0.5), self.box)

    def test_just_outside(self):
        assert not point_in_cuboid((0.501, 0, 0), self.box)

    @given(poses, st.tuples(*[st.floats(0.01, 2)] * 3), st.floats(0.001, 5))
    def test_far_points_outside(self, pose, half, extra):
        c = Cuboid(pose, half)
        assert point_in_cuboid(c.center, c)
        d = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
        assert not point_in_cuboid(c.center + d * (np.linalg.norm(half) + extra), c)

    def test_rejects_nonpositive_extents(self):
        with pytest.raises(ValueError):
            Cuboid(Pose.identity(), (0.1, 0.0, 0.1))


class TestRays:
    box = Cuboid(Pose.identity(), (0.5, 0.5, 0.5))

    def test_slab_hand_value(self):
        assert ray_cuboid_intersect(Ray((-2, 0, 0), (1, 0, 0)), self.box) == pytest.approx(1.5)

    def test_pointing_away(self):
        assert ray_cuboid_intersect(Ray((-2, 0, 0), (-1, 0, 0)), self.box) is None

    def test_origin_inside(self):
        assert ray_cuboid_intersect(Ray((0.1, 0, 0), (0, 1, 0)), self.box) == 0.0

    def test_direction_normalized(self):
        r = Ray((0, 0, 0), (3, 4, 0))
        assert np.linalg.norm(r.direction) == pytest.approx(1.0, abs=1e-12)

    def test_parallel_outside_slab_misses(self):
        assert ray_cuboid_intersect(Ray((-2, 0.6, 0), (1, 0, 0)), self.box) is None

    def test_nearest_of_many(self):
        near = Cuboid.from_center_size((2, 0, 0), (0.2, 0.2, 0.2))
        far = Cuboid.from_center_size((4, 0, 0), (0.2, 0.2, 0.2))
        d = cast_rays(np.zeros(3), np.array([[1.0, 0, 0], [0, 1.0, 0]]), [far, near])
        assert d[0] == pytest.approx(1.9) and math.isinf(d[1])

    def test_matches_marcher_on_1000_rays(self):
        rng = np.random.default_rng(4)
        mismatches = 0
        for i in range(1000):
            c = Cuboid(random_pose(rng), tuple(rng.uniform(0.05, 0.6, 3)))
            origin = c.center + rng.normal(size=3) * 1.5
            if i % 2:
                direction = c.pose.apply(rng.uniform(-1, 1, 3) * c.half_extents) - origin
            else:
                direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            got = ray_cuboid_intersect(Ray(tuple(origin), tuple(direction)), c)
            want = march_ray(origin, direction, c)
            if (got is None) != (want is None) or (got is not None and abs(got - want) > 2e-4):
                mismatches += 1
        assert mismatches == 0
