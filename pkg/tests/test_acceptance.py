"""Acceptance suite: ten criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from dalbandit.config import parse_config
from dalbandit.covering import CoveringConfig, build_cover_linear, delta_T
from dalbandit.dal import DAL, never_fire
from dalbandit.detect import GlrConfig, GlrFamily, ObservationBuffer, glr_scan, glr_statistic, glr_threshold
from dalbandit.envs import sample_geometric_changepoints
from dalbandit.harness import emit_csv, run_experiment
from dalbandit.policies import GPUCB, LinUCB, se_kernel

DESK_PS_LB = """
env.variant = linear
env.d = 5
env.n_actions = 20
env.noise_var = 0.01
env.schedule = ps
env.n_changes = 3
env.change = flip
policy.name = linucb
run.T = 10000
run.n_trials = 15
"""

RW_LB = """
env.variant = linear
env.d = 5
env.n_actions = 20
env.noise_var = 0.1
env.schedule = random_walk
policy.name = linucb
dal.mode = dal
run.T = 10000
run.n_trials = 15
"""


def check_1():
    start = time.perf_counter()
    thr = glr_threshold(100, 0.01)
    buf = ObservationBuffer(bounded=True)
    buf.extend([0.0] * 50 + [1.0] * 50)
    stat = glr_statistic(buf, 50, GlrFamily.bernoulli())
    res = glr_scan(buf, GlrConfig(GlrFamily.bernoulli(), 0.01))
    elapsed = time.perf_counter() - start
    ok = abs(thr - 53.590) <= 1e-3 and abs(stat - 100 * math.log(2)) < 1e-9 and res.detected and elapsed < 1.0
    return ok, f"threshold={thr:.4f} GLR_50={stat:.4f} fired={res.detected} ({elapsed:.2f}s)"


def check_2():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = GlrConfig(GlrFamily.bernoulli(), 1 / 5000)
    alarms = 0
    for _ in range(200):
        buf = ObservationBuffer(bounded=True)
        for x in (rng.random(5000) < 0.3).astype(float):
            buf.append(x)
            if glr_scan(buf, cfg).detected:
                alarms += 1
                break
    elapsed = time.perf_counter() - start
    rate = alarms / 200
    return rate <= 0.05 and elapsed < 60, f"false-alarm rate {rate:.3f} ({alarms}/200, {elapsed:.1f}s)"


def check_3():
    start = time.perf_counter()
    rng = np.random.default_rng(2025)
    cfg = GlrConfig(GlrFamily.bernoulli(), 1 / 1000)
    hits = 0
    delays = []
    for _ in range(200):
        stream = np.r_[rng.random(500) < 0.2, rng.random(200) < 0.8].astype(float)
        buf = ObservationBuffer(bounded=True)
        for n, x in enumerate(stream, start=1):
            buf.append(x)
            if glr_scan(buf, cfg).detected:
                if n > 500:
                    hits += 1
                    delays.append(n - 500)
                break
    elapsed = time.perf_counter() - start
    frac = hits / 200
    med = float(np.median(delays)) if delays else float("nan")
    return frac >= 0.95 and elapsed < 60, f"detected within 200 in {frac:.3f} of streams, median delay {med:.0f} ({elapsed:.1f}s)"


def check_4():
    sizes = [build_cover_linear(np.random.default_rng(s).standard_normal((200, 10))).size for s in range(100)]
    exact = sum(s == 10 for s in sizes)
    dT = delta_T(CoveringConfig("kernel_cover", R=1.0, d=2, p=0.0, q=0.5, C=1.0, gamma_T=100.0))
    ok = exact == 100 and abs(dT - math.sqrt(2) / 20) < 1e-12
    return ok, f"size 10 in {exact}/100 seeds; delta_T={dT:.6f} vs sqrt(2)/20={math.sqrt(2) / 20:.6f}"


def check_5():
    start = time.perf_counter()
    finals = {}
    for mode in ("dal", "bare", "oracle_restart"):
        finals[mode] = run_experiment(parse_config(DESK_PS_LB, {"dal.mode": mode})).mean_regret[-1]
    elapsed = time.perf_counter() - start
    dal, bare, oracle = finals["dal"], finals["bare"], finals["oracle_restart"]
    ok = dal <= 0.8 * bare and dal <= 2 * oracle and elapsed < 300
    return ok, (
        f"DAL {dal:.1f} vs bare {bare:.1f} ({100 * (1 - dal / bare):.0f}% lower), "
        f"oracle-restart {oracle:.1f} (ratio {dal / oracle:.2f}) ({elapsed:.0f}s)"
    )


def check_6():
    start = time.perf_counter()
    T, xi = 50000, 0.6
    counts = [sample_geometric_changepoints(T, xi, np.random.default_rng(s)).n_changes for s in range(1000)]
    elapsed = time.perf_counter() - start
    target = T * T**-xi
    mean = float(np.mean(counts))
    ok = abs(mean - target) / target < 0.1 and elapsed < 10
    return ok, f"mean change count {mean:.2f} vs T*T^-xi = {target:.2f} ({elapsed:.2f}s)"


def check_7():
    regrets, restarts = [], []
    for delta in (0.001, 0.01, 0.05):
        res = run_experiment(parse_config(RW_LB, {"env.drift_delta": str(delta)}))
        regrets.append(res.mean_regret[-1])
        restarts.append(float(np.mean(res.restart_counts)))
    ok = all(a <= b for a, b in zip(regrets, regrets[1:])) and all(a <= b for a, b in zip(restarts, restarts[1:]))
    return ok, "final regret " + ", ".join(f"{r:.1f}" for r in regrets) + "; restarts " + ", ".join(f"{r:.2f}" for r in restarts)


def check_8():
    start = time.perf_counter()
    mismatches = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        actions = rng.standard_normal((15, 5))
        means = actions @ rng.standard_normal(5)
        noise = rng.standard_normal(2000) * 0.1
        dal = DAL(LinUCB(5), build_cover_linear(actions), 2000, never_fire, monitor_all=True)
        dal.scheduler.cycle_length = 13  # frequent forced plays for a sharper check
        chosen, fed = [], []
        for t in range(2000):
            row = dal.select(0, actions)
            x = float(means[row] + noise[t])
            if dal._pending[1] is None:
                chosen.append(row)
                fed.append(x)
            dal.update(0, actions, row, x)
        bare = LinUCB(5)
        for row, x in zip(chosen, fed):
            i = bare.select(0, actions)
            mismatches += i != row
            bare.update(0, actions, i, x)
    elapsed = time.perf_counter() - start
    return mismatches == 0 and elapsed < 10, f"{mismatches} mismatched delegated decisions over 20 runs ({elapsed:.1f}s)"


def check_9():
    cfg = parse_config(DESK_PS_LB, {"run.T": "1500", "run.n_trials": "8"})
    with tempfile.TemporaryDirectory() as tmp:
        paths = []
        for par in (1, 8):
            cfg.run.parallelism = par
            p = Path(tmp) / f"p{par}.csv"
            emit_csv(run_experiment(cfg), p)
            paths.append(p.read_bytes())
    same = paths[0] == paths[1]
    return same, f"parallelism 1 vs 8 CSV bytes identical: {same} ({len(paths[0])} bytes)"


def check_10():
    rng = np.random.default_rng(10)
    worst_lin = 0.0
    picks_ok = True
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        reg, beta = float(rng.uniform(0.1, 3)), float(rng.uniform(0, 2))
        pol = LinUCB(d, reg=reg, beta=beta)
        V, b = reg * np.eye(d), np.zeros(d)
        for _ in range(int(rng.integers(0, 25))):
            a = rng.standard_normal(d)
            r = float(rng.standard_normal())
            pol.update(0, a[None, :], 0, r)
            V += np.outer(a, a)
            b += r * a
        acts = rng.standard_normal((int(rng.integers(1, 15)), d))
        Vinv = np.linalg.inv(V)
        brute = acts @ (Vinv @ b) + beta * np.sqrt(np.einsum("ij,jk,ik->i", acts, Vinv, acts))
        worst_lin = max(worst_lin, float(np.abs(pol.ucb(acts) - brute).max()))
        picks_ok &= pol.select(0, acts) == int(np.argmax(brute))
    A = rng.uniform(-1, 1, (40, 3))
    gp = GPUCB(0.5, 0.05, cap=100)
    for _ in range(150):
        i = gp.select(0, A)
        gp.update(0, A, i, float(np.sin(2 * A[i]).sum() + 0.2 * rng.standard_normal()))
    Q = rng.uniform(-1, 1, (20, 3))
    K = se_kernel(gp.X, gp.X, 0.5) + 0.05 * np.eye(len(gp.y))
    kq = se_kernel(gp.X, Q, 0.5)
    m_dense = kq.T @ np.linalg.solve(K, gp.y)
    v_dense = 1 - np.einsum("ij,ij->j", kq, np.linalg.solve(K, kq))
    m, v = gp.posterior(Q)
    worst_gp = max(np.abs(m - m_dense).max(), np.abs(v - v_dense).max())
    ok = worst_lin < 1e-8 and picks_ok and worst_gp < 1e-6
    return ok, f"LinUCB max |diff| {worst_lin:.2e}, argmax agree {picks_ok}; GP max |diff| {worst_gp:.2e}"


CHECKS = [check_1, check_2, check_3, check_4, check_5, check_6, check_7, check_8, check_9, check_10]


def _report(k, ok, detail):
    return f"ACCEPTANCE {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("k", range(1, 11))
def test_acceptance(k, capsys):
    ok, detail = CHECKS[k - 1]()
    with capsys.disabled():
        print("\n" + _report(k, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = [CHECKS[k - 1]() for k in range(1, 11)]
    for k, (ok, detail) in enumerate(results, start=1):
        print(_report(k, ok, detail))
    raise SystemExit(0 if all(ok for ok, _ in results) else 1)
