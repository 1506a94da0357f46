import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cellsim.analysis import (
    EFFECTIVE_TAKT,
    TimingModel,
    crossover,
    cycle_percentiles,
    effective_takt,
    nearest_rank,
    pass_rate,
    pass_rate_band,
    project_shift,
    replay_compare,
    series_from_records,
    strategy_modes,
)
from cellsim.geometry import Cuboid
from cellsim.logs import LogError, MotionRecord, ScanRecord
from cellsim.safety import MonitorConfig, SpeedMode
from cellsim.scheduler import CycleRecord

EIGHT_HOURS = 8 * 3600


def rec(i, start, wall, nominal=None, ops=3, failed=0):
    return CycleRecord(i, start, nominal if nominal is not None else wall, wall, 0.0, 0.0,
                       operations=ops, failed_operations=failed)


class TestProjection:
    def test_human_eight_hours(self):
        assert project_shift(TimingModel.human(), EIGHT_HOURS)[1][-1] == 170

    def test_robot_eight_hours(self):
        assert project_shift(TimingModel.robot_alone(), EIGHT_HOURS)[1][-1] == 181

    def test_effective_eight_hours(self):
        assert project_shift(TimingModel.robot_between_humans(), EIGHT_HOURS)[1][-1] == 167

    def test_horizon_below_takt(self):
        assert project_shift(TimingModel.robot_alone(), 100)[1][-1] == 0

    def test_closed_form_counts(self):
        # oracle: units completed by t equals floor(working seconds / takt)
        t, c = project_shift(TimingModel.human(), EIGHT_HOURS)
        for ti, ci in zip(t[::97], c[::97]):
            full, rem = divmod(int(ti), 3600)
            working = full * 3000 + min(rem, 3000)
            assert ci == working // 141

    def test_monotone_and_flat_in_breaks(self):
        t, c = project_shift(TimingModel.human(), EIGHT_HOURS)
        assert np.all(np.diff(c) >= 0)
        for k in range(8):
            window = (t >= k * 3600 + 3000) & (t <= (k + 1) * 3600)
            assert np.ptp(c[window]) == 0

    def test_crossover_near_one_hour(self):
        t, h = project_shift(TimingModel.human(), EIGHT_HOURS)
        _, r = project_shift(TimingModel.robot_alone(), EIGHT_HOURS)
        x = crossover(t, r, h)
        assert 3300 <= x <= 3720
        assert 3000 < x < 3720

    def test_invalid_models(self):
        with pytest.raises(ValueError):
            TimingModel("robot_alone", 0.0)
        with pytest.raises(ValueError):
            TimingModel("cyborg", 10.0)
        with pytest.raises(ValueError):
            project_shift(TimingModel.robot_alone(), 0)

    def test_series_from_records(self):
        recs = [rec(i, 100.0 * i, 100.0) for i in range(5)]
        t, c = series_from_records(recs, 500)
        assert c[99] == 0 and c[100] == 1 and c[-1] == 5


class TestCrossover:
    t = np.arange(5.0)

    def test_identical(self):
        assert crossover(self.t, [0, 1, 2, 3, 4], [0, 1, 2, 3, 4]) == 0.0

    def test_always_below(self):
        assert crossover(self.t, [0, 0, 1, 1, 2], [1, 1, 2, 2, 3]) is None

    def test_overtake(self):
        assert crossover(self.t, [0, 0, 2, 3, 4], [0, 1, 1, 2, 3]) == 2.0

    def test_mismatched(self):
        with pytest.raises(ValueError):
            crossover(self.t, [0, 1], [0, 1])


class TestStatistics:
    def test_effective_takt_deployment(self):
        recs = [rec(i, i * 18_600 / 108, 18_600 / 108) for i in range(108)]
        assert effective_takt(recs) == pytest.approx(172.2, abs=0.05)
        assert effective_takt(recs) == pytest.approx(EFFECTIVE_TAKT)

    def test_effective_takt_single_and_equal(self):
        assert effective_takt([rec(0, 0, 159.0)]) == 159.0
        assert effective_takt([rec(i, 0, 163.5) for i in range(7)]) == 163.5

    def test_effective_takt_empty(self):
        with pytest.raises(ValueError):
            effective_takt([])

    def test_nearest_rank_example(self):
        assert nearest_rank([100, 200, 300, 400, 500], 20) == 100
        assert nearest_rank([100, 200, 300, 400, 500], 80) == 400

    @given(st.lists(st.floats(1, 1e4), min_size=1, max_size=50), st.floats(0.5, 99.5))
    def test_nearest_rank_properties(self, vals, p):
        v = nearest_rank(vals, p)
        assert v in vals
        assert nearest_rank([v] * len(vals), p) == v
        assert nearest_rank(vals, 80) >= nearest_rank(vals, 20)

    def test_nearest_rank_invalid(self):
        with pytest.raises(ValueError):
            nearest_rank([1, 2], 0)
        with pytest.raises(ValueError):
            nearest_rank([], 50)

    def test_cycle_percentiles(self):
        recs = [rec(i, 0, w) for i, w in enumerate([150, 170, 160, 190, 155])]
        assert cycle_percentiles(recs) == [150, 170]

    def test_pass_rate(self):
        recs = [rec(i, 0, 1, ops=3, failed=int(i < 2)) for i in range(108)]
        assert pass_rate(recs) == pytest.approx(322 / 324)

    def test_band_contains_deployment_rate(self):
        lo, hi = pass_rate_band(324)
        assert lo <= 322 / 324 <= hi and lo == pytest.approx(319 / 324)


# --- replay ----------------------------------------------------------------------

TABLE = Cuboid.from_center_size((-0.1, -0.175, 0.39), (0.9, 1.65, 0.78))
ARM = Cuboid.from_center_size((-0.1, -0.3, 1.15), (0.1, 0.3, 0.1))
CONFIG = MonitorConfig(static_cuboids=(TABLE,))


def logs_with(points_per_tick, moving=True):
    scans, motion = [], []
    for k, pts in enumerate(points_per_tick):
        t = k * 0.1
        arm_pts = ARM.pose.apply(np.random.default_rng(k).uniform(-1, 1, (40, 3)) * np.asarray(ARM.half_extents))
        table_top = np.array([[x, y, 0.78] for x in (-0.4, 0.0, 0.2) for y in (-0.8, 0.0, 0.5)])
        cloud = np.vstack([arm_pts, table_top, *([np.asarray(pts)] if len(pts) else [])])
        scans.append(ScanRecord(k, t, cloud))
        motion.append(MotionRecord.from_links(k, t, {"upper": ARM}, {"upper": 0.2 if moving else 0.0}, None))
    return scans, motion


def torso(x, y):
    return [[x, y, z] for z in np.arange(0.8, 1.6, 0.05)]


def body(y):
    """A body-wide slab of returns across the table front at depth ``y``."""
    return [[x, y, z] for x in np.arange(-0.5, 0.3, 0.05) for z in np.arange(0.9, 1.6, 0.05)]


class TestReplay:
    def test_no_intrusion_all_zero(self):
        scans, motion = logs_with([[]] * 30)
        report = replay_compare(scans, motion, config=CONFIG, dt=0.1)
        assert all(r.increase_pct == 0 for r in report.rows)
        assert [r.strategy for r in report.rows] == ["none", "fixed_margin", "fixed_zones", "dynamic_spheres"]

    def test_margin_only_intrusion(self):
        # a worker just beside the table: inside the 0.2 m margin, outside the monitored grid
        pts = [[]] * 10 + [torso(0.45, -0.2)] * 10 + [[]] * 10
        scans, motion = logs_with(pts)
        report = replay_compare(scans, motion, config=CONFIG, dt=0.1)
        assert report.increase("fixed_margin") > 0
        assert report.increase("fixed_zones") == 0
        assert report.increase("none") == 0

    def test_stop_costs_twice(self):
        pts = [[]] * 10 + [body(-0.95)] * 5 + [[]] * 5
        scans, motion = logs_with(pts)
        modes = strategy_modes(scans, motion, "fixed_zones", CONFIG)
        assert modes[10:15] == [SpeedMode.STOP] * 5
        report = replay_compare(scans, motion, ["fixed_zones"], CONFIG, dt=0.1)
        assert report.rows[0].production_time == pytest.approx(2.5)
        assert report.increase("fixed_zones") == pytest.approx(25.0)

    def test_slowdown_only_stretches_motion(self):
        pts = [[]] * 10 + [body(-1.3)] * 10
        scans, motion = logs_with(pts)
        assert strategy_modes(scans, motion, "fixed_zones", CONFIG)[10] is SpeedMode.SLOWDOWN
        moving = replay_compare(scans, motion, ["fixed_zones"], CONFIG, dt=0.1).rows[0]
        assert moving.production_time == pytest.approx(1.0 + 1.0 / 0.7)
        scans, motion = logs_with(pts, moving=False)
        idle = replay_compare(scans, motion, ["fixed_zones"], CONFIG, dt=0.1).rows[0]
        assert idle.increase_pct == 0 and idle.slow_ticks == 10

    def test_misaligned_logs(self):
        scans, motion = logs_with([[]] * 5)
        motion[3] = MotionRecord(7, motion[3].t, motion[3].links)
        with pytest.raises(LogError) as err:
            replay_compare(scans, motion, config=CONFIG)
        assert err.value.tick == 3

    def test_length_mismatch(self):
        scans, motion = logs_with([[]] * 5)
        with pytest.raises(LogError) as err:
            replay_compare(scans, motion[:4], config=CONFIG)
        assert err.value.tick == 4

    def test_unknown_strategy(self):
        scans, motion = logs_with([[]] * 2)
        with pytest.raises(ValueError):
            replay_compare(scans, motion, ["teleport"], CONFIG)

    def test_text_report(self):
        scans, motion = logs_with([[]] * 3)
        text = replay_compare(scans, motion, config=CONFIG, dt=0.1).text()
        assert text.splitlines()[0].split() == ["strategy", "time_s", "increase_%", "stop", "slow"]
