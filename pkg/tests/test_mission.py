import math
from dataclasses import replace

import numpy as np
import pytest

from coalition_lab.mission import (Coalition, MissionConfig, Mode, Scenario, ZoneTask, parse_coalitions,
                                   generate_scenario, plan, run_mission, run_zone, zone_task)
from coalition_lab.policies import StraightLinePolicy, TrainedModels
from coalition_lab.world import Kind, WorldConfig, check_constraints
from coalition_lab.zoning import MeanShiftConfig

SCRIPTED = TrainedModels(StraightLinePolicy(Kind.UGV, None, 0.1), StraightLinePolicy(Kind.UAV, None, 0.1))


class NeverReturn:
    """UAV policy that chases its target and then hovers."""

    layout = None
    max_speed = 0.1

    def act(self, index, obs):
        if obs[-1] > 0.5:
            return np.zeros(2)
        rel = obs[4:6]
        d = float(np.hypot(*rel))
        return rel * min(1.0, 0.1 / d) if d else np.zeros(2)


def task(ground=(), aerial=(), obstacles=(), half=1.0):
    a2 = lambda x: np.asarray(x, dtype=float).reshape(-1, 2)
    return ZoneTask(np.zeros(2), half, a2(ground), a2(aerial), a2(obstacles))


def scenario(ground, aerial, obstacles=()):
    a2 = lambda x: np.asarray(x, dtype=float).reshape(-1, 2)
    return Scenario(a2(ground), a2(aerial), a2(obstacles))


# -- coalitions -----------------------------------------------------------------------

def test_coalition_spec_and_availability():
    cs = parse_coalitions("1x2", 3)
    assert len(cs) == 3 and all((c.n_ugv, c.n_uav) == (1, 2) for c in cs)
    assert Coalition.available_given([True, True])
    assert not Coalition.available_given([True, False])
    with pytest.raises(ValueError):
        parse_coalitions("two", 1)
    with pytest.raises(ValueError):
        Coalition(n_ugv=0)


# -- planning -------------------------------------------------------------------------

def test_no_zoning_single_zone():
    rng = np.random.default_rng(0)
    p = plan(rng.uniform(-900, 900, (9, 2)), MeanShiftConfig(25.0), 1, Mode.NO_ZONING)
    assert len(p.zones) == 1 and p.zones.membership == [list(range(9))]
    np.testing.assert_array_equal(p.zones.centers, [[0.0, 0.0]])


def test_two_clusters_two_zones():
    pts = [(100, 100), (105, 100), (100, 104), (-300, -200), (-296, -200)]
    p = plan(pts, MeanShiftConfig(25.0), 1, Mode.ZONED)
    assert len(p.zones) == 2 and p.zone_order == [0, 1]


def test_empty_plan_trivially_complete():
    p = plan(np.zeros((0, 2)), MeanShiftConfig(25.0), 1)
    assert len(p.zones) == 0
    out = run_mission(p, parse_coalitions("1x2", 1), SCRIPTED, scenario([], []))
    assert out.completed and out.phi == 0


def test_plan_rejects_k_zero():
    with pytest.raises(ValueError):
        plan([(0, 0)], MeanShiftConfig(25.0), 0)


def test_zone_task_maps_to_local_frame():
    sc = scenario([(110.0, 100.0)], [(100.0, 90.0)], [(100.0, 100.0), (900.0, 900.0)])
    zs = plan(sc.targets, MeanShiftConfig(25.0), 1).zones
    t = zone_task(sc, zs, 0, MissionConfig(), Mode.ZONED)
    center = zs.centers[0]
    np.testing.assert_allclose(t.ground_targets[0], (np.array([110.0, 100.0]) - center) / 25.0)
    assert len(t.obstacles) == 1  # the far obstacle is outside the zone
    assert t.half_extent == 1.0


# -- zone execution ---------------------------------------------------------------------

def test_zone_without_targets_finishes_immediately():
    res = run_zone(task(), parse_coalitions("1x2"), SCRIPTED)
    assert res.record.phi == 0 and res.record.completed


def test_no_aerial_targets_no_launch():
    res = run_zone(task(ground=[(0.5, 0.0)]), parse_coalitions("1x2"), SCRIPTED)
    assert all(not m.any() for m in res.record.uav_airborne)
    assert res.record.completed


def test_straight_line_kinematics():
    cfg = MissionConfig(world=WorldConfig(reach_threshold=1e-9))
    for d in (0.35, 0.5, 0.77):
        res = run_zone(task(ground=[(d, 0.0)]), parse_coalitions("1x0"), SCRIPTED, 0, cfg)
        assert res.record.completed
        assert res.record.phi == math.ceil(d / 0.1 - 1e-9)


def test_missing_model_raises():
    with pytest.raises(LookupError):
        run_zone(task(aerial=[(0.5, 0.5)]), parse_coalitions("1x1"), TrainedModels(None, None))


def test_uav_round_trip_and_landing_pause():
    cfg = MissionConfig(world=WorldConfig(reach_threshold=0.05))
    res = run_zone(task(ground=[(-0.6, 0.0)], aerial=[(0.0, 0.6)]), parse_coalitions("1x1"),
                   SCRIPTED, 0, cfg)
    assert res.record.completed
    states = res.log.states
    held = res.ugv_held
    assert any(h.any() for h in held)
    for t, h in enumerate(held):
        if h[0]:
            np.testing.assert_array_equal(states[t + 1].ugv_pos[0], states[t].ugv_pos[0])
    assert check_constraints(res.record, cfg.world).results["uav_return"].satisfied


def test_never_landing_uav_means_incomplete():
    models = TrainedModels(SCRIPTED.ugv, NeverReturn())
    sc = scenario([(10.0, 0.0)], [(0.0, 10.0)])
    p = plan(sc.targets, MeanShiftConfig(25.0), 1)
    out = run_mission(p, parse_coalitions("1x1"), models, sc)
    assert out.targets_reached == out.targets_total == 2
    assert not out.completed and out.to_record().completed is False


def test_two_zones_one_coalition_sums_steps():
    sc = scenario([(300.0, 0.0), (-200.0, 0.0)], [])
    p = plan(sc.targets, MeanShiftConfig(25.0), 1)
    out = run_mission(p, parse_coalitions("1x0"), SCRIPTED, sc)
    assert len(out.zone_steps) == 2 and out.completed
    assert out.phi == sum(out.zone_steps) + sum(out.transit_steps)
    assert out.transit_steps == [math.ceil(300 / 2.5), math.ceil(500 / 2.5)]


def test_two_teams_run_in_parallel():
    sc = scenario([(300.0, 0.0), (-200.0, 0.0)], [])
    p = plan(sc.targets, MeanShiftConfig(25.0), 1)
    out = run_mission(p, parse_coalitions("1x0", 2), SCRIPTED, sc)
    assert out.phi == max(s + t for s, t in zip(out.zone_steps, out.transit_steps))


def test_single_cluster_modes_reach_same_targets():
    sc = scenario([(5.0, 3.0), (-4.0, 2.0)], [(2.0, -6.0)])
    reached = {}
    for mode in Mode:
        p = plan(sc.targets, MeanShiftConfig(25.0), 1, mode)
        out = run_mission(p, parse_coalitions("1x2"), SCRIPTED, sc, 0, MissionConfig(zone_step_limit=2000))
        last = out.logs[0].states[-1]
        reached[mode] = (tuple(last.ground_reached), tuple(last.aerial_reached))
    assert reached[Mode.ZONED] == reached[Mode.NO_ZONING] == ((True, True), (True,))


def test_scripted_missions_satisfy_coverage_constraints():
    cfg = MissionConfig()
    for seed in range(5):
        sc = generate_scenario(np.random.default_rng(seed), 6, 2, 0)
        p = plan(sc.targets, MeanShiftConfig(25.0), 1)
        out = run_mission(p, parse_coalitions("1x2", 2), SCRIPTED, sc, seed, cfg)
        assert out.targets_reached <= out.targets_total
        for rec, t in zip(out.records, out.zone_tasks):
            if rec.completed:
                w = replace(cfg.world, arena_half_extent=t.half_extent)
                res = check_constraints(rec, w).results
                assert res["ground_coverage"].satisfied and res["aerial_coverage"].satisfied


def test_generate_scenario_shape():
    sc = generate_scenario(np.random.default_rng(1), 8, 2, 3)
    assert len(sc.ground_targets) == 4 and len(sc.aerial_targets) == 4 and len(sc.obstacles) == 3
    assert np.all(np.abs(sc.targets) <= 1000)
    zs = plan(sc.targets, MeanShiftConfig(25.0), 1).zones
    assert len(zs) == 2
