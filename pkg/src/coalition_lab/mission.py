"""Mission orchestration: zone the targets, dispatch coalitions, clear zones.

Scenario geometry lives in a global frame measured in metres. Each zone is
executed in its own world whose coordinates are ``(global - centre) /
meters_per_unit``, i.e. the normalised frame the policies were trained in.
Coalitions are grouped into teams of ``k_per_zone``; the next zone in
order goes to the team whose clock is lowest, and the mission step count
is the largest team clock (teams run in parallel).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .evaluation import EpisodeRecord
from .policies import TrainedModels
from .world import (EpisodeLog, Kind, WorldConfig, WorldState, layout_for, make_state,
                    nearest_index, observe, refresh_assignments, step)
from .zoning import MeanShiftConfig, ZoneSet, assign_zones


class Mode(str, Enum):
    ZONED = "zoned"
    NO_ZONING = "no-zoning"


class Status(str, Enum):
    AVAILABLE = "available"
    EN_ROUTE = "en-route"
    CLEARING = "clearing"


@dataclass
class Coalition:
    n_ugv: int = 1
    n_uav: int = 2
    status: Status = Status.AVAILABLE

    def __post_init__(self):
        if self.n_ugv < 1:
            raise ValueError("a coalition needs at least one UGV")
        if self.n_uav < 0:
            raise ValueError("n_uav must be >= 0")

    @staticmethod
    def available_given(uav_landed: Sequence[bool]) -> bool:
        """A coalition is free exactly when every member UAV is landed."""
        return bool(all(uav_landed))


def parse_coalitions(text: str, count: int = 1) -> list[Coalition]:
    """Parse ``"1x2"`` (UGVs x UAVs per coalition) into ``count`` coalitions."""
    try:
        g, a = (int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise ValueError(f"coalition layout {text!r} is not of the form <ugvs>x<uavs>") from exc
    return [Coalition(g, a) for _ in range(count)]


@dataclass
class Scenario:
    """Mission instance in metres, arena ``[-size/2, size/2]^2``."""

    ground_targets: np.ndarray
    aerial_targets: np.ndarray
    obstacles: np.ndarray
    arena_size_m: float = 2000.0

    @property
    def targets(self) -> np.ndarray:
        return np.concatenate([self.ground_targets, self.aerial_targets]).reshape(-1, 2)

    @property
    def n_ground(self) -> int:
        return len(self.ground_targets)


@dataclass
class MissionPlan:
    zones: ZoneSet
    k_per_zone: int
    zone_order: list[int]
    mode: Mode

    def __post_init__(self):
        if self.k_per_zone < 1:
            raise ValueError("k_per_zone must be >= 1")


@dataclass(frozen=True)
class MissionConfig:
    """Execution knobs; ``world`` supplies speed, reach, danger zones and battery."""

    world: WorldConfig = field(default_factory=WorldConfig)
    zone_step_limit: int = 140
    ugv_ring_radius: float = 0.25
    return_margin: float = 1.2
    depot: tuple[float, float] = (0.0, 0.0)

    @property
    def speed_m(self) -> float:
        return self.world.max_speed * self.world.meters_per_unit


@dataclass
class ZoneTask:
    """One zone's contents in the zone frame (arena units)."""

    center_m: np.ndarray
    half_extent: float
    ground_targets: np.ndarray
    aerial_targets: np.ndarray
    obstacles: np.ndarray


@dataclass
class ZoneResult:
    record: EpisodeRecord
    log: EpisodeLog
    uav_landed: np.ndarray
    ugv_held: list[np.ndarray] = field(default_factory=list)


@dataclass
class MissionOutcome:
    records: list[EpisodeRecord]
    zone_steps: list[int]
    transit_steps: list[int]
    phi: int
    alpha: int
    beta: int
    targets_total: int
    targets_reached: int
    completed: bool
    logs: list[EpisodeLog] = field(default_factory=list)
    zone_tasks: list[ZoneTask] = field(default_factory=list)

    def to_record(self) -> EpisodeRecord:
        return EpisodeRecord(self.phi, self.alpha, self.beta, self.completed,
                             self.targets_total, self.targets_reached)


# -- planning ------------------------------------------------------------------------

def plan(targets, cfg: MeanShiftConfig, k: int, mode: Mode | str = Mode.ZONED,
         arena_size_m: float = 2000.0) -> MissionPlan:
    """Zone the targets (densest first) or make one whole-arena zone."""
    mode = Mode(mode)
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return MissionPlan(ZoneSet(np.zeros((0, 2)), [], cfg.radius), k, [], mode)
    if mode is Mode.NO_ZONING:
        zones = ZoneSet(np.zeros((1, 2)), [list(range(len(pts)))], arena_size_m * math.sqrt(2) / 2)
    else:
        zones = assign_zones(pts, cfg)
    return MissionPlan(zones, k, list(range(len(zones))), mode)


def zone_task(scenario: Scenario, zones: ZoneSet, z: int, config: MissionConfig,
              mode: Mode) -> ZoneTask:
    mpu = config.world.meters_per_unit
    center = zones.centers[z]
    members = zones.membership[z]
    ground = [scenario.ground_targets[i] for i in members if i < scenario.n_ground]
    aerial = [scenario.aerial_targets[i - scenario.n_ground] for i in members if i >= scenario.n_ground]
    if mode is Mode.NO_ZONING:
        half = scenario.arena_size_m / 2 / mpu
    else:
        half = max(config.world.arena_half_extent, zones.radius / mpu)
    to_local = lambda pts: ((np.asarray(pts, dtype=np.float64).reshape(-1, 2) - center) / mpu)
    obstacles = to_local(scenario.obstacles)
    obstacles = obstacles[np.all(np.abs(obstacles) <= half, axis=1)]
    return ZoneTask(center.copy(), half, to_local(ground), to_local(aerial), obstacles)


# -- zone execution ---------------------------------------------------------------------

def _ring(n: int, radius: float) -> np.ndarray:
    if n == 1:
        return np.zeros((1, 2))
    ang = 2 * math.pi * np.arange(n) / n
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def run_zone(task: ZoneTask, coalitions: Sequence[Coalition], models: TrainedModels,
             seed: int = 0, config: MissionConfig | None = None) -> ZoneResult:
    """Clear one zone with the given coalitions under frozen policies.

    UAVs start landed on their coalition's UGVs and launch only while some
    open aerial target has no UAV heading for it. A UAV that has reached
    its target (or whose battery is critical) flies home; that UGV holds
    still until touchdown. Ends when every zone target is reached and every
    UAV has landed, or after ``zone_step_limit`` steps.
    """
    config = config or MissionConfig()
    n_ugv = sum(c.n_ugv for c in coalitions)
    n_uav = sum(c.n_uav for c in coalitions)
    if n_ugv == 0:
        raise ValueError("run_zone needs at least one coalition")
    wcfg = replace(config.world, arena_half_extent=task.half_extent, n_ugv=n_ugv, n_uav=n_uav,
                   n_obstacle=len(task.obstacles), n_ground_target=len(task.ground_targets),
                   n_aerial_target=len(task.aerial_targets))
    ugv_pos = _ring(n_ugv, config.ugv_ring_radius)
    carrier = []
    base = 0
    for c in coalitions:
        carrier += [base + j % c.n_ugv for j in range(c.n_uav)]
        base += c.n_ugv
    carrier = np.array(carrier, dtype=np.int64)
    state = make_state(wcfg, ugv_pos, ugv_pos[carrier] if n_uav else np.zeros((0, 2)),
                       task.obstacles, task.ground_targets, task.aerial_targets, carrier)
    log = EpisodeLog(state)
    held_log: list[np.ndarray] = []

    def finished(s: WorldState) -> bool:
        return s.all_targets_reached() and s.all_uavs_landed()

    if finished(state):
        return ZoneResult(log.to_record(True), log, np.ones(n_uav, bool), held_log)
    ugv_policy = models.require(Kind.UGV) if len(task.ground_targets) else None
    uav_policy = models.require(Kind.UAV) if len(task.aerial_targets) and n_uav else None
    ugv_layout = getattr(ugv_policy, "layout", None) or layout_for(wcfg, Kind.UGV)
    uav_layout = getattr(uav_policy, "layout", None) or layout_for(wcfg, Kind.UAV)

    for _ in range(config.zone_step_limit):
        state = state.copy()
        _launch(state)
        _force_returns(state, config.return_margin)
        _signal_homes(state)
        held = np.zeros(n_ugv, bool)
        returning = state.uav_airborne & state.uav_reached
        held[state.uav_home[returning & (state.uav_home >= 0)]] = True
        held_log.append(held)
        actions = np.zeros((n_ugv + n_uav, 2))
        if ugv_policy is not None and not state.ground_reached.all():
            for g in range(n_ugv):
                if not held[g]:
                    actions[g] = ugv_policy.act(g, observe(state, g, Kind.UGV, ugv_layout))
        if uav_policy is not None:
            for i in np.flatnonzero(state.uav_airborne & (state.uav_steps > 0)):
                actions[n_ugv + i] = uav_policy.act(int(i), observe(state, int(i), Kind.UAV, uav_layout))
        state, report = step(state, actions)
        log.add(state, report)
        if finished(state):
            break
    return ZoneResult(log.to_record(), log, state.uav_landed_on >= 0, held_log)


def _launch(state: WorldState) -> None:
    open_t = np.flatnonzero(~state.aerial_reached)
    if len(open_t) == 0:
        return
    chasing = {int(t) for t in state.uav_target[state.uav_seeking] if t >= 0}
    need = len([t for t in open_t if t not in chasing]) - int(np.sum(state.uav_seeking & (state.uav_target < 0)))
    for i in np.flatnonzero((state.uav_landed_on >= 0) & (state.uav_steps > 0)):
        if need <= 0:
            break
        state.uav_landed_on[i] = -1
        state.uav_reached[i] = False
        state.uav_home[i] = -1
        need -= 1
    refresh_assignments(state)


def _force_returns(state: WorldState, margin: float) -> None:
    """Critical battery: abandon the target and head for the nearest UGV."""
    ms = state.config.max_speed
    for i in np.flatnonzero(state.uav_seeking):
        g = nearest_index(state.ugv_pos, state.uav_pos[i])
        d = float(np.hypot(*(state.ugv_pos[g] - state.uav_pos[i])))
        if state.uav_steps[i] <= margin * d / ms:
            state.uav_reached[i] = True
            state.uav_target[i] = -1
            state.uav_home[i] = g


def _signal_homes(state: WorldState) -> None:
    for i in np.flatnonzero(state.uav_airborne & state.uav_reached & (state.uav_home < 0)):
        state.uav_home[i] = nearest_index(state.ugv_pos, state.uav_pos[i])


# -- whole missions ------------------------------------------------------------------------

def run_mission(mission_plan: MissionPlan, coalitions: Sequence[Coalition], models: TrainedModels,
                scenario: Scenario, seed: int = 0, config: MissionConfig | None = None) -> MissionOutcome:
    """Clear every zone in order; transit between zones is scripted."""
    config = config or MissionConfig()
    if not coalitions:
        raise ValueError("at least one coalition is required")
    k = mission_plan.k_per_zone
    n_teams = max(1, len(coalitions) // k)
    teams = [list(coalitions[t * k:(t + 1) * k]) for t in range(n_teams)]
    if not teams[-1]:
        teams = [list(coalitions)]
    clocks = [0] * len(teams)
    where = [np.asarray(config.depot, dtype=np.float64)] * len(teams)
    records, zone_steps, transit_steps, logs, tasks = [], [], [], [], []
    total = len(scenario.targets)
    reached = alpha = beta = 0
    completed = True
    for n, z in enumerate(mission_plan.zone_order):
        task = zone_task(scenario, mission_plan.zones, z, config, mission_plan.mode)
        t = min(range(len(teams)), key=lambda j: (clocks[j], j))
        team = teams[t]
        for c in team:
            c.status = Status.EN_ROUTE
        hop = 0
        if mission_plan.mode is Mode.ZONED:
            dist = float(np.hypot(*(task.center_m - where[t])))
            hop = math.ceil(dist / config.speed_m - 1e-9) if dist > 0 else 0
        for c in team:
            c.status = Status.CLEARING
        result = run_zone(task, team, models, seed + n, config)
        for c in team:
            c.status = Status.AVAILABLE if Coalition.available_given(result.uav_landed) else Status.CLEARING
        rec = result.record
        clocks[t] += hop + rec.phi
        where[t] = task.center_m
        records.append(rec)
        zone_steps.append(rec.phi)
        transit_steps.append(hop)
        logs.append(result.log)
        tasks.append(task)
        reached += rec.targets_reached
        alpha += rec.alpha
        beta += rec.beta
        completed = completed and rec.completed
    return MissionOutcome(records, zone_steps, transit_steps, max(clocks) if records else 0,
                          alpha, beta, total, reached, completed and reached == total, logs, tasks)


# -- scenario generation ---------------------------------------------------------------------

def generate_scenario(rng: np.random.Generator, n_targets: int = 8, n_clusters: int = 2,
                      n_obstacles: int = 2, arena_size_m: float = 2000.0,
                      zone_radius_m: float = 25.0, spread: float = 0.45,
                      min_gap_m: float = 2.5) -> Scenario:
    """Targets in tight clusters, alternately ground and aerial; obstacles near clusters.

    Cluster centres are at least four zone radii apart and a zone radius
    inside the arena; targets fall within ``spread * zone_radius_m`` of
    their cluster centre.
    """
    if n_clusters < 1 and n_targets > 0:
        raise ValueError("n_clusters must be >= 1")
    half = arena_size_m / 2 - zone_radius_m
    centers: list[np.ndarray] = []
    for _ in range(10_000):
        if len(centers) == n_clusters:
            break
        c = rng.uniform(-half, half, size=2)
        if all(np.hypot(*(c - q)) >= 4 * zone_radius_m for q in centers):
            centers.append(c)
    else:
        raise RuntimeError("could not place cluster centres; arena too small")

    placed: list[np.ndarray] = []

    def near(c: np.ndarray, r: float) -> np.ndarray:
        for _ in range(10_000):
            ang = rng.uniform(0, 2 * math.pi)
            rad = r * math.sqrt(rng.uniform())
            p = c + rad * np.array([math.cos(ang), math.sin(ang)])
            if all(np.hypot(*(p - q)) > min_gap_m for q in placed):
                placed.append(p)
                return p
        raise RuntimeError("cluster too crowded")

    pts = [near(centers[i % n_clusters], spread * zone_radius_m) for i in range(n_targets)]
    ground = [p for i, p in enumerate(pts) if i % 2 == 1]
    aerial = [p for i, p in enumerate(pts) if i % 2 == 0]
    obstacles = [near(centers[int(rng.integers(n_clusters))], 0.8 * zone_radius_m) for _ in range(n_obstacles)]
    as2 = lambda a: np.array(a, dtype=np.float64).reshape(-1, 2)
    return Scenario(as2(ground), as2(aerial), as2(obstacles), arena_size_m)


# -- traces ------------------------------------------------------------------------------------

def render_zone_trace(result_log: EpisodeLog, path) -> None:
    """SVG of every vehicle path in one zone plus targets and obstacles."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rec = result_log.to_record()
    fig, ax = plt.subplots(figsize=(5, 5))
    for p in rec.ugv_paths:
        ax.plot(p[:, 0], p[:, 1], "-", color="tab:brown", lw=1.5)
    for p in rec.uav_paths:
        ax.plot(p[:, 0], p[:, 1], "--", color="tab:blue", lw=1)
    if len(rec.ground_targets):
        ax.plot(*rec.ground_targets.T, "s", color="tab:green", label="ground target")
    if len(rec.aerial_targets):
        ax.plot(*rec.aerial_targets.T, "^", color="tab:purple", label="aerial target")
    if len(rec.obstacles):
        ax.plot(*rec.obstacles.T, "x", color="black", label="obstacle")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    plt.rcParams["svg.hashsalt"] = "coalition-lab"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
