"""Acceptance suite: one test per criterion, summarised at the end of the run.

Criteria 4, 5 and 7 train desk-scale models (about 20 minutes on one core
in total); the trained models are shared through module fixtures.
"""
from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import Timer, note
from coalition_lab import config as cfgmod, evaluation as ev, maddpg, mappo, neural
from coalition_lab.cli import main, make_env, run_evaluation_episodes
from coalition_lab.mission import Mode
from coalition_lab.policies import ActorPolicy, TrainedModels
from coalition_lab.reward import RewardParams, pair_penalty, return_reward, target_distance_reward
from coalition_lab.world import (EpisodeLog, Kind, WorldConfig, check_constraints, make_state, step)
from coalition_lab.zoning import MeanShiftConfig, assign_zones, coverage_ok, mean_shift

SEED = 0
TRAIN_EPISODES = 5000
UAV_EPISODES = 2000
DEMO_EPISODES = 50
EVAL_EPISODES = 200


# -- shared training runs -------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk():
    return cfgmod.preset("desk")


@pytest.fixture(scope="module")
def ugv_maddpg(desk):
    cfg = replace(desk.maddpg, episodes=TRAIN_EPISODES)
    with Timer() as t:
        res = maddpg.train(lambda: make_env(desk, Kind.UGV), cfg, SEED)
    res.seconds = t.seconds
    return res


@pytest.fixture(scope="module")
def ugv_mappo(desk):
    cfg = replace(desk.mappo, episodes=TRAIN_EPISODES)
    with Timer() as t:
        res = mappo.train(lambda: make_env(desk, Kind.UGV), cfg, SEED)
    res.seconds = t.seconds
    return res


@pytest.fixture(scope="module")
def trained_models(desk, ugv_maddpg):
    env = make_env(desk, Kind.UGV)
    ugv = ActorPolicy(ugv_maddpg.actors, env.layout, env.config.max_speed)
    _, tracks = maddpg.greedy_rollouts(env, ugv_maddpg.actors, DEMO_EPISODES,
                                       np.random.default_rng(np.random.SeedSequence([SEED, 1])))
    uav_cfg = replace(desk.maddpg, episodes=UAV_EPISODES)
    res = maddpg.train(lambda: make_env(desk, Kind.UAV, tracks), uav_cfg, SEED)
    uav_env = make_env(desk, Kind.UAV, tracks)
    uav = ActorPolicy(res.actors, uav_env.layout, uav_env.config.max_speed)
    return TrainedModels(ugv, uav), res


def window_means(returns: np.ndarray, width: int = 500) -> tuple[float, float]:
    return float(np.mean(returns[:width])), float(np.mean(returns[-width:]))


# -- criterion 1 ---------------------------------------------------------------------------

def brute_force_fixed_points(points, radius, tol=1e-6, max_iter=100):
    pts = [tuple(map(float, p)) for p in points]
    for _ in range(max_iter):
        new = []
        for px, py in pts:
            inside = [(qx, qy) for qx, qy in pts if (px - qx) ** 2 + (py - qy) ** 2 <= radius * radius]
            new.append((sum(q[0] for q in inside) / len(inside), sum(q[1] for q in inside) / len(inside)))
        moved = sum(math.hypot(a[0] - b[0], a[1] - b[1]) for a, b in zip(new, pts)) / len(pts)
        if moved <= tol:
            break
        pts = new
    out = []
    for p in pts:
        if not any(math.hypot(p[0] - q[0], p[1] - q[1]) <= 1e-4 * radius for q in out):
            out.append(p)
    return np.array(out)


@pytest.mark.criterion(1)
def test_criterion_1_zoning_oracle():
    rng = np.random.default_rng(101)
    worst = 0.0
    with Timer() as t:
        for _ in range(500):
            pts = rng.uniform(-1.0, 1.0, size=(int(rng.integers(1, 21)), 2))
            radius = float(rng.uniform(0.05, 0.8))
            cfg = MeanShiftConfig(radius)
            assert coverage_ok(pts, assign_zones(pts, cfg))
            ours, ref = mean_shift(pts, cfg), brute_force_fixed_points(pts, radius)
            assert ours.shape == ref.shape
            worst = max(worst, float(np.max(np.abs(ours - ref))))
    note(1, f"500 instances, max deviation {worst:.1e}, {t.seconds:.2f} s")
    assert worst <= 1e-9
    assert t.seconds < 5.0


# -- criterion 2 ---------------------------------------------------------------------------

def _rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.mark.criterion(2)
def test_criterion_2_gradients():
    rng = np.random.default_rng(202)
    h = 1e-6
    worst = 0.0
    for k in range(100):
        hidden, out = ("tanh", "identity") if k % 2 == 0 else ("relu", "tanh")
        sizes = [int(rng.integers(1, 21)), int(rng.integers(1, 65)), int(rng.integers(1, 65)), int(rng.integers(1, 5))]
        p = neural.init_mlp(sizes, hidden, out, rng, output_gain=1.0)
        x = rng.normal(size=sizes[0])
        up = rng.normal(size=sizes[-1])
        grads, dx = neural.backward(p, x, up)
        f = lambda params, inp: float(np.sum(up * neural.forward(params, inp)))
        arrays = p.arrays()
        # every parameter array along a random direction, plus sampled single entries
        for j, a in enumerate(arrays):
            d = rng.normal(size=a.shape)
            plus = [b.copy() for b in arrays]
            minus = [b.copy() for b in arrays]
            plus[j] += h * d
            minus[j] -= h * d
            num = (f(p.with_arrays(plus), x) - f(p.with_arrays(minus), x)) / (2 * h)
            worst = max(worst, _rel_err(float(np.sum(grads.arrays()[j] * d)), num))
            for _ in range(3):
                idx = tuple(int(rng.integers(0, s)) for s in a.shape)
                plus = [b.copy() for b in arrays]
                minus = [b.copy() for b in arrays]
                plus[j][idx] += h
                minus[j][idx] -= h
                num = (f(p.with_arrays(plus), x) - f(p.with_arrays(minus), x)) / (2 * h)
                worst = max(worst, _rel_err(float(grads.arrays()[j][idx]), num))
        e = rng.normal(size=x.shape)
        num = (f(p, x + h * e) - f(p, x - h * e)) / (2 * h)
        worst = max(worst, _rel_err(float(dx @ e), num))
    note(2, f"100 networks, worst relative error {worst:.1e}")
    assert worst <= 1e-4


# -- criterion 3 ---------------------------------------------------------------------------

def brute_gae(r, v, boot, d, gamma, lam):
    vals = list(v) + [boot]
    out = []
    for t in range(len(r)):
        total, coef = 0.0, 1.0
        for l in range(t, len(r)):
            total += coef * (r[l] + (0.0 if d[l] else gamma * vals[l + 1]) - v[l])
            if d[l]:
                break
            coef *= gamma * lam
        out.append(total)
    return np.array(out)


@pytest.mark.criterion(3)
def test_criterion_3_algebra():
    assert maddpg.critic_target(1.0, False, 0.99, 2.0) == pytest.approx(2.98, abs=1e-12)
    assert maddpg.critic_target(1.0, True, 0.99, 2.0) == 1.0
    assert maddpg.critic_target(1.0, False, 0.0, 2.0) == 1.0

    one = neural.MlpParams([np.array([[1.0]])], [np.array([0.0])], ["identity"])
    zero = neural.MlpParams([np.array([[0.0]])], [np.array([0.0])], ["identity"])
    assert neural.soft_update(zero, one, 0.01).weights[0][0, 0] == 0.01
    assert neural.soft_update(zero, one, 1.0).weights[0][0, 0] == 1.0
    assert neural.soft_update(zero, one, 0.0).weights[0][0, 0] == 0.0

    adv = mappo.gae([1, 1], [0, 0], 0.0, [False, False], 0.99, 0.95)
    assert adv[1] == 1.0 and adv[0] == pytest.approx(1.9405, abs=1e-12)
    rng = np.random.default_rng(303)
    for _ in range(500):
        n = int(rng.integers(1, 7))
        r, v, d = rng.normal(size=n), rng.normal(size=n), rng.random(n) < 0.3
        g, lam, boot = float(rng.uniform()), float(rng.uniform()), float(rng.normal())
        assert np.max(np.abs(mappo.gae(r, v, boot, d, g, lam) - brute_gae(r, v, boot, d, g, lam))) <= 1e-12

    assert mappo.reward_to_go([4.0], 7.0, [True], 0.99)[0] == 4.0
    assert list(mappo.reward_to_go([1, 1, 1], 0.0, [False, False, True], 1.0)) == [3, 2, 1]

    assert mappo.clipped_objective(0.0, 0.8, 0.2) == 0.8
    assert mappo.clipped_objective(math.log(1.5), 1.0, 0.2) == pytest.approx(1.2, abs=1e-15)
    assert mappo.clipped_objective(math.log(0.5), -1.0, 0.2) == pytest.approx(-0.8, abs=1e-15)

    p = RewardParams()
    assert target_distance_reward([(0.4, 0.4)], [False], [(0.4, 0.4)], p) == 0.0
    assert target_distance_reward([(0.3, 0.4)], [False], [(0.0, 0.0)], p) == pytest.approx(-0.5, abs=1e-15)
    assert target_distance_reward([(0, 0), (1, 1), (0.5, -0.5)], [False] * 3,
                                  [(0, 0), (1, 1), (0.5, 0.2)], p) == pytest.approx(-0.7, abs=1e-12)
    assert pair_penalty(0.1 + 0.2, 0.1, 0.2, 1.0) == 0.0
    assert pair_penalty(0.1, 0.1, 0.2, 1.0) == -1.0
    assert pair_penalty(0.2, 0.1, 0.2, 1.0) == pytest.approx(-0.5, abs=1e-15)
    assert return_reward(False, 0.4, p) == -1.0
    assert return_reward(True, 0.0, p) == 0.0
    assert return_reward(True, 0.3, p) == -0.3
    note(3, "target, soft update, GAE, reward-to-go, surrogate and reward tables exact")


# -- criterion 4 ---------------------------------------------------------------------------

@pytest.mark.criterion(4)
def test_criterion_4_maddpg_converges(ugv_maddpg):
    ret = ugv_maddpg.returns()
    first, last = window_means(ret)
    before_last = float(np.mean(ret[-1000:-500]))
    closed = (last - first) / (0.0 - first)
    note(4, f"first 500 {first:.2f}, last 500 {last:.2f}, gap closed {closed:.0%}, "
            f"{ugv_maddpg.seconds:.0f} s")
    assert len(ret) == TRAIN_EPISODES
    assert closed >= 0.5
    # plateau: the last two windows agree to within a tenth of the initial gap
    assert abs(last - before_last) <= 0.1 * abs(first)


# -- criterion 5 ---------------------------------------------------------------------------

@pytest.mark.criterion(5)
def test_criterion_5_maddpg_not_below_mappo(ugv_maddpg, ugv_mappo):
    _, a = window_means(ugv_maddpg.returns())
    _, b = window_means(ugv_mappo.returns())
    note(5, f"MADDPG last 500 {a:.2f}, MAPPO last 500 {b:.2f} ({ugv_mappo.seconds:.0f} s)")
    assert len(ugv_mappo.returns()) == TRAIN_EPISODES
    assert a >= b


# -- criterion 6 ---------------------------------------------------------------------------

def scripted(config, ugv, uav, obstacles, ground, aerial, actions):
    state = make_state(config, ugv, uav, obstacles, ground, aerial)
    log = EpisodeLog(state)
    for a in actions:
        state, report = step(state, a)
        log.add(state, report)
    return log.to_record()


@pytest.mark.criterion(6)
def test_criterion_6_bookkeeping():
    w = WorldConfig()
    e = []
    # A: clean drive, target reached on step 4
    e.append(scripted(w, [(0, 0)], [], [], [(0.5, 0)], [], [[(0.1, 0)]] * 4))
    # B: second UGV drives into the first (real contact on steps 2 and 3)
    e.append(scripted(w, [(-0.5, 0), (-0.5, 0.3)], [], [], [(-0.5, -0.1)], [],
                      [[(0, 0), (0, -0.1)]] * 3))
    # C: UGV passes through an obstacle (real contact on steps 2 and 3)
    e.append(scripted(w, [(0, 0)], [], [(0.25, 0)], [(0.6, 0)], [], [[(0.1, 0)]] * 5))
    # D: UAV reaches one of two targets and hovers away from the UGV
    e.append(scripted(w, [(0, 0)], [(0, 0)], [], [], [(0, 0.3), (0.9, -0.9)],
                      [[(0, 0), (0, 0.1)]] * 2 + [[(0, 0), (0, 0)]] * 2))

    assert [(r.phi, r.alpha, r.beta, r.completed, r.targets_reached, r.targets_total) for r in e] == [
        (4, 0, 0, True, 1, 1), (3, 2, 0, True, 1, 1), (5, 0, 2, True, 1, 1), (4, 0, 0, False, 1, 2)]
    assert ev.completion_rate(e) == 0.75
    assert ev.collisions_per_1k(e) == 1000.0
    assert ev.mean_steps(e) == 4.0
    assert ev.accuracy(e) == 80.0
    assert ev.completion_time(e) == 4.0

    flagged = [check_constraints(r, w) for r in e]
    assert [f.violated() for f in flagged] == [[], ["ugv_separation"], ["ugv_obstacle"],
                                               ["aerial_coverage", "uav_return"]]
    assert flagged[1].results["ugv_separation"].first_step == 2
    assert flagged[2].results["ugv_obstacle"].first_step == 2
    note(6, "metrics exact; planted violations flagged and nothing else")


# -- criterion 7 ---------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_criterion_7_zoning_ablation(desk, trained_models):
    models, uav_run = trained_models
    rates = {}
    for mode in Mode:
        config = replace(desk, mission=replace(desk.mission, mode=mode.value, n_targets=8,
                                               n_clusters=2, episodes=EVAL_EPISODES))
        records = run_evaluation_episodes(config, models, EVAL_EPISODES)
        assert len(records) == EVAL_EPISODES
        rates[mode] = (ev.completion_rate(records), ev.accuracy(records))
    uav_first, uav_last = window_means(uav_run.returns(), 200)
    note(7, f"zoned completion {rates[Mode.ZONED][0]:.3f} accuracy {rates[Mode.ZONED][1]:.1f}%, "
            f"no-zoning completion {rates[Mode.NO_ZONING][0]:.3f} accuracy {rates[Mode.NO_ZONING][1]:.1f}%, "
            f"UAV training return {uav_first:.1f} -> {uav_last:.1f}")
    assert rates[Mode.ZONED][0] >= rates[Mode.NO_ZONING][0]


# -- criterion 8 ---------------------------------------------------------------------------

def _csv_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


@pytest.mark.criterion(8)
def test_criterion_8_determinism(tmp_path):
    small = ["--set", "maddpg.batch_size=64", "--set", "mappo.buffer_length=5",
             "--set", "io.demo_episodes=3", "--seed", "11"]

    def run(root: Path):
        out = ["--out", str(root)]
        assert main(["train", "--phase", "ugv", "--episodes", "30", *small, *out]) == 0
        assert main(["train", "--phase", "uav", "--episodes", "30", *small, *out]) == 0
        assert main(["train", "--phase", "ugv", "--algo", "mappo", "--episodes", "10", *small,
                     "--out", str(root / "mappo")]) == 0
        assert main(["evaluate", "--policy", str(root / "ugv" / "policy"), "--episodes", "5", *small, *out]) == 0
        assert main(["evaluate", "--policy", str(root / "uav" / "policy"), "--episodes", "5", *small, *out]) == 0
        assert main(["mission", "--ugv-policy", str(root / "ugv" / "policy"), "--uav-policy",
                     str(root / "uav" / "policy"), "--episodes", "3", "--no-plots", *small, *out]) == 0
        return _csv_bytes(root)

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    note(8, f"{len(a)} CSV files compared")
    assert len(a) >= 9
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a), [k for k in a if a[k] != b[k]]


# -- criterion 9 ---------------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_criterion_9_declared_not_reproducible():
    pytest.skip("absolute completion, accuracy and baseline-efficiency figures need the full training budget and the unreleased "
                "baseline; comparison tables are emitted by `mission` and `report` instead")
