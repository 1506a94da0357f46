import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellsim.geometry import Cuboid, Pose
from cellsim.safety import (
    DEFAULT_SLOWDOWN_ZONE,
    DEFAULT_STOP_ZONE,
    EMPTY,
    OBSTACLE,
    ROBOT,
    TOOL,
    EnergyLimitTable,
    GridSpec,
    LabeledVoxelGrid,
    LinkState,
    ModeFilter,
    MonitorConfig,
    RobotState,
    SafetyDecision,
    SpeedMode,
    SsmParams,
    ZoneError,
    ZoneSpec,
    baseline_predict,
    decide_mode,
    dynamic_zone_decide,
    kinetic_report,
    monitor_tick,
    noisy_predict,
    BaselinePredictor,
    occupancy_ratio,
    protective_distance,
    segment,
    slowdown_around,
    voxelize,
    zone_voxel_count,
)

from oracles import all_voxel_centers, floor_voxels, segment_labels

G = GridSpec()


def stop_zone_voxels(n):
    idx = np.flatnonzero(
        np.all((G.all_centers >= DEFAULT_STOP_ZONE.min_corner) & (G.all_centers <= DEFAULT_STOP_ZONE.max_corner), 1)
    )
    return idx[:n]


class TestGrid:
    def test_default_shape(self):
        assert G.shape == (18, 47, 33) and G.n_voxels == 27_918

    def test_centers_match_oracle(self):
        assert np.allclose(G.all_centers, all_voxel_centers(G.min_corner, G.max_corner, G.voxel_size))

    def test_ravel_round_trip(self):
        flat = np.arange(G.n_voxels)
        assert np.array_equal(G.ravel(G.unravel(flat)), flat)

    def test_invalid(self):
        with pytest.raises(ValueError):
            GridSpec((0, 0, 0), (1, 1, 1), 0.0)
        with pytest.raises(ValueError):
            GridSpec((0, 0, 0), (1, 0, 1))

    def test_labels_validated(self):
        with pytest.raises(ValueError):
            LabeledVoxelGrid(G, np.full(G.n_voxels, 4, dtype=np.uint8))
        with pytest.raises(ValueError):
            LabeledVoxelGrid(G, np.zeros(10, dtype=np.uint8))


class TestVoxelize:
    def test_empty(self):
        assert voxelize(np.empty((0, 3)), G).size == 0

    def test_single_point(self):
        p = np.asarray(G.min_corner) + 0.01
        assert voxelize([p], G).tolist() == [0]

    def test_many_points_in_one_voxel(self):
        rng = np.random.default_rng(0)
        pts = np.asarray(G.min_corner) + 0.05 * 3 + rng.uniform(0.001, 0.049, (1000, 3))
        assert voxelize(pts, G).size == 1

    def test_outside_points_discarded(self):
        assert voxelize([[5.0, 5.0, 5.0], [-5, 0, 0]], G).size == 0

    def test_oracle_1000_clouds(self):
        rng = np.random.default_rng(1)
        lo, hi = np.asarray(G.min_corner), np.asarray(G.max_corner)
        for _ in range(1000):
            pts = rng.uniform(lo - 0.2, hi + 0.2, (rng.integers(0, 60), 3))
            got = {tuple(v) for v in G.unravel(voxelize(pts, G))}
            assert got == floor_voxels(pts, G.min_corner, G.max_corner, G.voxel_size)


class TestSegment:
    def test_robot_label(self):
        c = G.centers(np.array([1234]))[0]
        grid = segment(np.array([1234]), G, [Cuboid.from_center_size(c, (0.1, 0.1, 0.1))], None)
        assert grid.labels.ravel()[1234] == ROBOT

    def test_tool_precedence(self):
        c = G.centers(np.array([99]))[0]
        box = Cuboid.from_center_size(c, (0.1, 0.1, 0.1))
        assert segment(np.array([99]), G, [box], box).labels.ravel()[99] == TOOL

    def test_unoccupied_is_empty(self):
        grid = segment(np.array([5]), G, [], None)
        assert grid.labels.ravel()[5] == OBSTACLE and grid.labels.ravel()[6] == EMPTY

    def test_oracle_1000_scenes(self):
        rng = np.random.default_rng(2)
        lo, hi = np.asarray(G.min_corner), np.asarray(G.max_corner)
        for _ in range(1000):
            occ = np.unique(rng.integers(0, G.n_voxels, rng.integers(1, 40)))
            robot = [Cuboid(Pose.from_rpy(*rng.uniform(-1, 1, 3), rng.uniform(lo, hi)), tuple(rng.uniform(0.05, 0.5, 3)))
                     for _ in range(rng.integers(0, 4))]
            tool = Cuboid.from_center_size(rng.uniform(lo, hi), rng.uniform(0.05, 0.4, 3)) if rng.random() < 0.7 else None
            grid = segment(occ, G, robot, tool)
            ijk = [tuple(v) for v in G.unravel(occ)]
            want = segment_labels(ijk, G.min_corner, G.voxel_size, robot, tool)
            got = {k: int(grid.labels.ravel()[G.ravel(np.array([k]))[0]]) for k in ijk}
            assert got == want
            # never an obstacle inside a robot or tool cuboid
            obst = grid.indices(OBSTACLE)
            if obst.size:
                centers = G.centers(obst)
                for c in robot + ([tool] if tool else []):
                    assert not c.contains(centers).any()


class TestPredictors:
    def test_baseline_empty(self):
        assert baseline_predict(LabeledVoxelGrid.empty(G)).size == 0

    def test_baseline_filters_obstacles(self):
        labels = np.zeros(G.n_voxels, dtype=np.uint8)
        labels[:5] = OBSTACLE
        labels[100:110] = ROBOT
        assert baseline_predict(LabeledVoxelGrid(G, labels)).tolist() == list(range(5))

    def test_baseline_matches_filter_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            labels = rng.integers(0, 4, G.n_voxels).astype(np.uint8)
            assert np.array_equal(baseline_predict(LabeledVoxelGrid(G, labels)), np.flatnonzero(labels == 1))

    def test_noise_free_is_identity(self):
        labels = np.zeros(G.n_voxels, dtype=np.uint8)
        labels[[3, 7, 11]] = OBSTACLE
        grid = LabeledVoxelGrid(G, labels)
        assert np.array_equal(noisy_predict(BaselinePredictor(), 0, 0, 5)(grid), [3, 7, 11])

    def test_full_false_negatives(self):
        labels = np.zeros(G.n_voxels, dtype=np.uint8)
        labels[:50] = OBSTACLE
        assert noisy_predict(BaselinePredictor(), 0, 1, 5)(LabeledVoxelGrid(G, labels)).size == 0

    def test_false_positive_expectation(self):
        grid = LabeledVoxelGrid.empty(G)
        counts = [noisy_predict(BaselinePredictor(), 0.01, 0, s)(grid).size for s in range(1000)]
        assert abs(np.mean(counts) - 279.18) / 279.18 < 0.05

    def test_deterministic_per_seed_and_tick(self):
        grid = LabeledVoxelGrid.empty(G)
        p = noisy_predict(BaselinePredictor(), 0.01, 0, 9)
        assert np.array_equal(p(grid, tick=4), p(grid, tick=4))
        assert not np.array_equal(p(grid, tick=4), p(grid, tick=5))

    def test_rates_validated(self):
        with pytest.raises(ValueError):
            noisy_predict(BaselinePredictor(), 1.5, 0, 0)


class TestZones:
    def test_default_stop_zone_count(self):
        assert zone_voxel_count(G, DEFAULT_STOP_ZONE) == 8910

    def test_slowdown_contains_stop_footprint(self):
        assert DEFAULT_SLOWDOWN_ZONE.contains_footprint(DEFAULT_STOP_ZONE)
        lo = DEFAULT_SLOWDOWN_ZONE.min_corner
        assert lo[0] == pytest.approx(-1.0) and lo[1] == pytest.approx(-1.45)

    def test_per_side_widths(self):
        z = slowdown_around(DEFAULT_STOP_ZONE, (0.3, 0.4, 0.5, 0.6))
        assert z.min_corner[0] == pytest.approx(-0.85) and z.max_corner[1] == pytest.approx(1.25)

    def test_empty_prediction(self):
        assert occupancy_ratio(np.array([], dtype=int), G, DEFAULT_STOP_ZONE) == 0.0

    def test_nine_versus_eight(self):
        r9 = occupancy_ratio(stop_zone_voxels(9), G, DEFAULT_STOP_ZONE)
        r8 = occupancy_ratio(stop_zone_voxels(8), G, DEFAULT_STOP_ZONE)
        assert r9 == pytest.approx(9 / 8910) and decide_mode(r9, 0) is SpeedMode.STOP
        assert r8 == pytest.approx(8 / 8910) and decide_mode(r8, 0) is SpeedMode.NORMAL

    def test_full_zone(self):
        assert occupancy_ratio(stop_zone_voxels(10_000), G, DEFAULT_STOP_ZONE) == 1.0

    def test_disjoint_zone_raises(self):
        with pytest.raises(ZoneError):
            occupancy_ratio(np.array([1]), G, ZoneSpec((5, 5, 5), (6, 6, 6)))

    @given(st.sets(st.integers(0, G.n_voxels - 1), max_size=200), st.sets(st.integers(0, G.n_voxels - 1), max_size=50))
    def test_monotone(self, a, b):
        a_arr = np.array(sorted(a), dtype=int)
        ab = np.array(sorted(a | b), dtype=int)
        for zone in (DEFAULT_STOP_ZONE, DEFAULT_SLOWDOWN_ZONE):
            assert occupancy_ratio(ab, G, zone) >= occupancy_ratio(a_arr, G, zone)


class TestDecideMode:
    def test_examples(self):
        assert decide_mode(0, 0) is SpeedMode.NORMAL and SpeedMode.NORMAL.ratio == 1.0
        assert decide_mode(0, 0.002) is SpeedMode.SLOWDOWN and SpeedMode.SLOWDOWN.ratio == 0.7
        assert decide_mode(0.002, 0.002) is SpeedMode.STOP and SpeedMode.STOP.ratio == 0.0

    def test_boundary_does_not_trigger(self):
        assert decide_mode(0.001, 0.001) is SpeedMode.NORMAL

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, s1, w1, ds, dw):
        s2, w2 = min(1.0, s1 + ds), min(1.0, w1 + dw)
        assert decide_mode(s2, w2).ratio <= decide_mode(s1, w1).ratio


class TestSsm:
    def test_default_distance(self):
        assert abs(protective_distance(SsmParams(), 0.0) - 0.486) < 1e-12
        assert abs(protective_distance(SsmParams(), 1.0) - 0.586) < 1e-12

    def test_zero_params(self):
        assert protective_distance(SsmParams(0, 0, 0, 0, 0, 0, 0, 0.1), 3.0) == 0.0

    def test_affine_slope(self):
        p = SsmParams()
        rng = np.random.default_rng(4)
        for v in rng.uniform(0, 3, 10):
            h = 1e-3
            slope = (protective_distance(p, v + h) - protective_distance(p, v)) / h
            assert abs(slope - p.t_r) < 1e-12

    def test_negative_speed(self):
        with pytest.raises(ValueError):
            protective_distance(SsmParams(), -0.1)

    def test_negative_params_rejected(self):
        with pytest.raises(ValueError):
            SsmParams(v_h=-1)

    def _voxel_at_distance(self, link, d):
        # the voxel center nearest to link + (d, 0, 0); report its true distance
        idx = int(np.argmin(np.linalg.norm(G.all_centers - (np.asarray(link) + [0, d, 0]), axis=1)))
        return idx, float(np.linalg.norm(G.all_centers[idx] - link))

    def test_stop_inside_sphere(self):
        link = tuple(G.centers(np.array([G.ravel(np.array([[9, 20, 16]]))[0]]))[0])
        idx, dist = self._voxel_at_distance(link, 0.40)
        assert dist == pytest.approx(0.40)
        d = dynamic_zone_decide([LinkState(link, 0.0)], SsmParams(), np.array([idx]), G, DEFAULT_SLOWDOWN_ZONE)
        assert d.mode is SpeedMode.STOP

    def test_no_stop_outside_sphere(self):
        link = tuple(G.centers(np.array([G.ravel(np.array([[9, 20, 16]]))[0]]))[0])
        idx, dist = self._voxel_at_distance(link, 0.60)
        assert dist == pytest.approx(0.60)
        d = dynamic_zone_decide([LinkState(link, 0.0)], SsmParams(), np.array([idx]), G, DEFAULT_SLOWDOWN_ZONE)
        assert d.mode is not SpeedMode.STOP

    def test_no_prediction_is_normal(self):
        d = dynamic_zone_decide([LinkState((0, 0, 1), 0.5)], SsmParams(), np.array([], dtype=int), G,
                                DEFAULT_SLOWDOWN_ZONE)
        assert d.mode is SpeedMode.NORMAL

    def test_reduces_to_fixed_sphere(self):
        rng = np.random.default_rng(5)
        link = (-0.1, -0.2, 1.0)
        dist = np.linalg.norm(G.all_centers - link, axis=1)
        for _ in range(200):
            idx = rng.integers(0, G.n_voxels)
            d = dynamic_zone_decide([LinkState(link, 0.0)], SsmParams(), np.array([idx]), G, DEFAULT_SLOWDOWN_ZONE)
            assert (d.mode is SpeedMode.STOP) == (dist[idx] <= 0.486)

    def test_speed_grows_sphere(self):
        link = (-0.1, -0.2, 1.0)
        dist = np.linalg.norm(G.all_centers - link, axis=1)
        idx = int(np.flatnonzero((dist > 0.52) & (dist < 0.56))[0])
        slow = dynamic_zone_decide([LinkState(link, 0.0)], SsmParams(), np.array([idx]), G, DEFAULT_SLOWDOWN_ZONE)
        fast = dynamic_zone_decide([LinkState(link, 1.0)], SsmParams(), np.array([idx]), G, DEFAULT_SLOWDOWN_ZONE)
        assert slow.mode is not SpeedMode.STOP and fast.mode is SpeedMode.STOP


class TestEnergy:
    table = {
        ("Right arm", "Head (Face)"): 2.68, ("Right arm", "Hand"): 0.60, ("Right arm", "Lower Arm"): 0.23,
        ("Right arm", "Upper Arm"): 0.20, ("Right arm", "Torso (Chest)"): 0.18,
        ("Left arm", "Head (Face)"): 1.52, ("Left arm", "Hand"): 0.34, ("Left arm", "Lower Arm"): 0.13,
        ("Left arm", "Upper Arm"): 0.11, ("Left arm", "Torso (Chest)"): 0.10,
    }

    def test_reproduces_table(self):
        rows = kinetic_report({"Right arm": 0.295, "Left arm": 0.167})
        assert len(rows) == 10
        for r in rows:
            assert abs(r.ratio - self.table[(r.arm, r.region)]) <= 0.005
            assert r.safe == (r.region != "Head (Face)")

    def test_limit_exactly_is_safe(self):
        rows = kinetic_report({"a": 0.49})
        hand = next(r for r in rows if r.region == "Hand")
        assert hand.ratio == 1.0 and hand.status == "Safe"

    def test_zero_energy(self):
        assert all(r.ratio == 0 and r.safe for r in kinetic_report({"a": 0.0}))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            kinetic_report({"a": -0.1})

    def test_limits_positive(self):
        with pytest.raises(ValueError):
            EnergyLimitTable({"Head": 0.0})


class TestMonitorTick:
    def test_robot_only_scan_is_normal(self):
        link = Cuboid.from_center_size((-0.1, -0.3, 1.0), (0.2, 0.2, 0.2))
        rng = np.random.default_rng(6)
        pts = link.pose.apply(rng.uniform(-1, 1, (500, 3)) * 0.1)
        state = RobotState((link.inflated(0.05),), None, (LinkState((-0.1, -0.3, 1.0)),))
        assert monitor_tick(pts, state, MonitorConfig()).mode is SpeedMode.NORMAL

    def test_obstacle_in_stop_zone(self):
        pts = np.array([[x, -0.5, z] for x in np.arange(-0.5, 0.3, 0.05) for z in (0.8, 0.9)])
        d = monitor_tick(pts, RobotState(), MonitorConfig())
        assert d.mode is SpeedMode.STOP and d.speed_ratio == 0.0

    def test_background_masked(self):
        table = Cuboid.from_center_size((-0.1, -0.175, 0.39), (0.9, 1.65, 0.78))
        pts = np.array([[x, y, 0.78] for x in np.arange(-0.5, 0.3, 0.05) for y in np.arange(-0.9, 0.6, 0.05)])
        assert monitor_tick(pts, RobotState(), MonitorConfig()).mode is SpeedMode.STOP
        cfg = MonitorConfig(static_cuboids=(table,))
        assert monitor_tick(pts, RobotState(), cfg).mode is SpeedMode.NORMAL

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(G.min_corner, G.max_corner, (300, 3))
        cfg = MonitorConfig(predictor=noisy_predict(BaselinePredictor(), 0.001, 0.1, 3))
        assert monitor_tick(pts, RobotState(), cfg, 4) == monitor_tick(pts, RobotState(), cfg, 4)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            MonitorConfig(mode="adaptive")


class TestModeFilter:
    def _d(self, mode):
        return SafetyDecision(0.0, 0.0, mode)

    def test_no_window_passes_through(self):
        f = ModeFilter(0)
        modes = [SpeedMode.STOP, SpeedMode.NORMAL, SpeedMode.SLOWDOWN]
        assert [f(self._d(m)).mode for m in modes] == modes

    def test_window_delays_release_only(self):
        f = ModeFilter(2)
        seq = [SpeedMode.NORMAL, SpeedMode.STOP, SpeedMode.NORMAL, SpeedMode.NORMAL, SpeedMode.NORMAL]
        out = [f(self._d(m)).mode for m in seq]
        assert out == [SpeedMode.NORMAL, SpeedMode.STOP, SpeedMode.STOP, SpeedMode.STOP, SpeedMode.NORMAL]
