import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dalbandit.config import parse_config
from dalbandit.covering import build_cover_linear, full_cover
from dalbandit.dal import DAL, ExplorationScheduler, alpha_k, min_detectable_shift, never_fire, scheduler_position
from dalbandit.detect import DetectionResult, GlrConfig, GlrFamily
from dalbandit.envs import ParametricModel
from dalbandit.harness import run_trial
from dalbandit.policies import LinUCB, SquareCB, UniformRandom


def sched(tau, N_e, cycle_length):
    return SimpleNamespace(tau=tau, N_e=N_e, cycle_length=cycle_length)


def fixed_cycle(dal, length):
    dal.scheduler.cycle_length = length
    return dal


class TestAlpha:
    def test_worked_example(self):
        a = alpha_k(1, 1, 10, 50000)
        assert a == pytest.approx(math.sqrt(10) / (2 * math.sqrt(50000) * math.log(50000) ** 2), rel=1e-12)
        assert a == pytest.approx(6.0401e-5, rel=1e-4)
        # exact alpha gives 165559; dividing by the 5-digit rounding 6.0401e-5 gives 165561
        assert ExplorationScheduler(50000, 10).cycle_length == math.ceil(10 / a) == 165559
        assert math.ceil(10 / 6.0401e-5) == 165561

    @given(st.integers(1, 1000), st.integers(1, 50), st.integers(1, 50), st.integers(3, 10**7))
    def test_monotone_in_k_and_clamped(self, k, c, n, T):
        a1, a2 = alpha_k(k, c, n, T), alpha_k(k + 1, c, n, T)
        assert 0 < a1 <= a2 <= 1

    def test_alpha_max(self):
        assert alpha_k(1, 1000, 1000, 3, alpha_max=0.5) == 0.5

    def test_domain(self):
        with pytest.raises(ValueError):
            alpha_k(1, 1, 1, 2)


class TestScheduler:
    def test_enumeration(self):
        s = sched(0, 3, 10)
        assert [scheduler_position(t, s) for t in range(1, 12)] == [1, 2, 3] + [None] * 7 + [1]

    def test_every_step_forced(self):
        s = sched(4, 5, 5)
        assert [scheduler_position(t, s) for t in range(5, 16)] == [1, 2, 3, 4, 5] * 2 + [1]

    def test_before_tau(self):
        with pytest.raises(ValueError):
            scheduler_position(3, sched(3, 1, 2))

    @given(st.integers(0, 100), st.integers(1, 10), st.integers(0, 30), st.integers(1, 500))
    def test_window_counts(self, tau, N_e, extra, start):
        s = sched(tau, N_e, N_e + extra)
        window = range(tau + start, tau + start + s.cycle_length)
        forced = [scheduler_position(t, s) for t in window]
        assert sum(p is not None for p in forced) == N_e
        assert sorted(p for p in forced if p is not None) == list(range(1, N_e + 1))

    def test_restart_recomputes(self):
        sc = ExplorationScheduler(10000, 4)
        first = sc.cycle_length
        sc.restart(77)
        assert sc.tau == 77 and sc.k == 2
        assert sc.cycle_length == max(math.ceil(4 / alpha_k(2, 1, 4, 10000)), 4) <= first


def run_dal(dal, actions, means, rng, steps, noise=0.1):
    log = []
    for _ in range(steps):
        row = dal.select(0, actions, rng)
        forced = dal._pending[1] is not None
        x = float(means[row] + noise * rng.standard_normal())
        restarted = dal.update(0, actions, row, x)
        log.append((row, x, forced, restarted))
    return log


class TestDal:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.actions = rng.standard_normal((8, 3))
        self.means = self.actions @ np.array([0.5, -0.2, 0.1])
        self.cover = build_cover_linear(self.actions)

    def make(self, detector=never_fire, monitor_all=False, policy=None):
        return DAL(policy or LinUCB(3), self.cover, 1000, detector, monitor_all=monitor_all)

    def test_forced_plays_follow_cover(self):
        dal = fixed_cycle(self.make(), 7)
        log = run_dal(dal, self.actions, self.means, np.random.default_rng(1), 28)
        forced_rows = [row for row, _, f, _ in log if f]
        assert forced_rows == list(self.cover.indices) * 4
        assert [f for *_, f, _ in log] == ([True] * 3 + [False] * 4) * 4
        assert dal.n_forced == 12

    def test_no_delegated_rewards_without_monitor_all(self):
        dal = fixed_cycle(self.make(), 5)
        log = run_dal(dal, self.actions, self.means, np.random.default_rng(2), 50)
        per_key = {k: b.values.tolist() for k, b in dal.buffers.items()}
        expect: dict = {}
        for row, x, forced, _ in log:
            if forced:
                expect.setdefault((0, row), []).append(x)
        assert per_key == expect

    def test_monitor_all_records_delegated(self):
        dal = fixed_cycle(self.make(monitor_all=True), 5)
        run_dal(dal, self.actions, self.means, np.random.default_rng(2), 50)
        assert sum(b.count for b in dal.buffers.values()) == 50

    def test_restart_bookkeeping(self):
        fire_at = {10, 25}
        dal = self.make(monitor_all=True)

        def detector(buf):
            return DetectionResult(True, 1, 1.0, buf.count) if dal.t in fire_at else DetectionResult(False)

        dal._detect = detector
        log = run_dal(dal, self.actions, self.means, np.random.default_rng(3), 40)
        assert dal.restarts == [10, 25]
        assert dal.k == 1 + len(dal.restarts)
        assert dal.scheduler.tau == 25
        assert [r for *_, r in log].count(True) == 2
        # each epoch opens with one full pass over the cover
        assert [f for _, _, f, _ in log[25:28]] == [True] * 3

    def test_buffers_empty_after_restart(self):
        dal = fixed_cycle(self.make(monitor_all=True), 4)
        run_dal(dal, self.actions, self.means, np.random.default_rng(4), 20)
        assert dal.buffers
        dal.restart()
        assert not dal.buffers and dal.policy.n_updates == 0

    def test_restart_equals_fresh_start(self):
        rng_a = np.random.default_rng(5)
        a = self.make(monitor_all=True)
        run_dal(a, self.actions, self.means, rng_a, 30)
        a.restart()
        b = self.make(monitor_all=True)
        b.scheduler = ExplorationScheduler(1000, self.cover.size, k=2)
        state = rng_a.bit_generator.state
        rng_b = np.random.default_rng()
        rng_b.bit_generator.state = state
        la = run_dal(a, self.actions, self.means, rng_a, 60)
        lb = run_dal(b, self.actions, self.means, rng_b, 60)
        assert la == lb

    def test_update_must_follow_select(self):
        dal = self.make()
        with pytest.raises(RuntimeError):
            dal.update(0, self.actions, 0, 1.0)
        row = dal.select(0, self.actions)
        with pytest.raises(RuntimeError):
            dal.update(0, self.actions, (row + 1) % 8, 1.0)

    def test_missing_forced_action_delegates(self):
        dal = self.make()
        ids = np.array([5, 6, 7])  # cover starts at action 0, not offered
        row = dal.select(0, self.actions[ids], np.random.default_rng(0), ids=ids)
        assert dal._pending == (row, None)

    def test_step_returns_row_and_flag(self):
        dal = self.make()
        row, restarted = dal.step(0, self.actions, lambda i: float(self.means[i]))
        assert row == self.cover.indices[0] and restarted is False

    def test_glr_detector_config(self):
        dal = DAL(LinUCB(3), self.cover, 1000, GlrConfig(GlrFamily.gaussian(0.01), 0.01))
        dal.step(0, self.actions, lambda i: 0.0)
        assert dal.detector_config is not None


def delegated_transcript(dal, actions, reward_fn, rng, steps):
    chosen, fed = [], []
    for _ in range(steps):
        row = dal.select(0, actions, rng)
        x = reward_fn(row)
        if dal._pending[1] is None:
            chosen.append(row)
            fed.append(x)
        dal.update(0, actions, row, x)
    return chosen, fed


@pytest.mark.parametrize("kind", ["linucb", "squarecb", "uniform"])
def test_black_box_transparency(kind):
    rng0 = np.random.default_rng(9)
    actions = rng0.standard_normal((10, 4))
    noise = rng0.standard_normal(400)
    means = actions @ rng0.standard_normal(4)

    def make():
        if kind == "linucb":
            return LinUCB(4)
        if kind == "squarecb":
            return SquareCB(10, 4, model="ridge")
        return UniformRandom()

    counter = iter(range(10**6))

    def reward(i):
        return float(means[i] + 0.1 * noise[next(counter) % 400])

    dal = fixed_cycle(DAL(make(), build_cover_linear(actions), 400, never_fire, monitor_all=True), 9)
    chosen, fed = delegated_transcript(dal, actions, reward, np.random.default_rng(17), 400)
    assert dal.restarts == []
    bare = make()
    rng = np.random.default_rng(17)
    replay = []
    for x in fed:
        i = bare.select(0, actions, rng)
        bare.update(0, actions, i, x)
        replay.append(i)
    assert replay == chosen


def test_oracle_detector_segment_decomposition():
    """Restarting exactly at the change-points: each segment replays a fresh policy."""
    rng = np.random.default_rng(21)
    actions = rng.standard_normal((12, 3))
    thetas = [rng.uniform(-1, 1, 3) for _ in range(3)]
    changes = [120, 260]
    T = 400

    def theta_at(t):
        return thetas[sum(t >= c for c in changes)]

    cover = build_cover_linear(actions)
    dal = fixed_cycle(DAL(LinUCB(3), cover, T, never_fire, monitor_all=True), 11)

    def detector(buf):
        return DetectionResult(True, 1, 1.0, buf.count) if dal.t + 1 in changes else DetectionResult(False)

    dal._detect = detector
    noise = rng.standard_normal(T)
    steps = []
    for t in range(1, T + 1):
        means = actions @ theta_at(t)
        row = dal.select(0, actions)
        forced = dal._pending[1] is not None
        x = float(means[row] + 0.1 * noise[t - 1])
        dal.update(0, actions, row, x)
        steps.append((t, row, forced, x, means.max() - means[row]))
    assert dal.restarts == [c - 1 for c in changes]
    bounds = [1] + changes + [T + 1]
    total = 0.0
    for lo, hi in zip(bounds, bounds[1:]):
        seg = [s for s in steps if lo <= s[0] < hi]
        fresh = LinUCB(3)
        deleg_regret = 0.0
        for t, row, forced, x, reg in seg:
            if forced:
                continue
            assert fresh.select(0, actions) == row
            fresh.update(0, actions, row, x)
            deleg_regret += reg
        forced_regret = sum(s[4] for s in seg if s[2])
        assert sum(s[4] for s in seg) == pytest.approx(deleg_regret + forced_regret)
        total += deleg_regret + forced_regret
    assert total == pytest.approx(sum(s[4] for s in steps))


class TestMinDetectableShift:
    def test_identical(self):
        m = ParametricModel(np.array([0.3, -0.4]))
        assert min_detectable_shift(m, m, full_cover(np.eye(2)), np.eye(2)) == 0.0

    def test_basis_cover(self):
        a, b = np.array([0.3, -0.4, 0.9]), np.array([0.1, 0.2, 0.85])
        gap = min_detectable_shift(ParametricModel(a), ParametricModel(b), build_cover_linear(np.eye(3)), np.eye(3))
        assert gap == pytest.approx(np.abs(a - b).max())

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_superset_monotone(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((6, 3))
        ma, mb = ParametricModel(rng.standard_normal(3)), ParametricModel(rng.standard_normal(3))
        small = build_cover_linear(A[:2])
        assert min_detectable_shift(ma, mb, small, A) <= min_detectable_shift(ma, mb, full_cover(A), A)


@pytest.mark.slow
class TestDalStatistical:
    def test_stationary_false_alarms(self):
        cfg = parse_config(
            """
            env.variant = linear
            env.d = 5
            env.n_actions = 20
            env.schedule = stationary
            policy.name = uniform
            run.T = 5000
            """
        )
        quiet = sum(len(run_trial(cfg, seed).restarts) == 0 for seed in range(100))
        assert quiet >= 95

    def test_single_flip_one_restart(self):
        cfg = parse_config(
            """
            env.variant = linear
            env.d = 5
            env.n_actions = 20
            env.schedule = ps
            env.n_changes = 1
            env.change = flip
            policy.name = linucb
            run.T = 5000
            """
        )
        exact = sum(len(run_trial(cfg, seed).restarts) == 1 for seed in range(20))
        assert exact >= 18
