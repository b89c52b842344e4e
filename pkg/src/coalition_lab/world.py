"""Deterministic 2D particle world for UGVs, UAVs, obstacles and targets.

Positions live in normalised arena units; the arena is the square
``[-h, h]^2`` with ``h = arena_half_extent`` (1.0 for training worlds).
Agents are driven by direct velocity commands with a unit timestep and are
clipped to the arena. All entities are points; contact geometry is carried
entirely by the danger-zone widths and real-collision distances.

States are plain value objects: :func:`step` never mutates its input.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .evaluation import EpisodeRecord

MAX_SPAWN_ATTEMPTS = 10_000


class Kind(str, Enum):
    UGV = "ugv"
    UAV = "uav"


class Contact(Enum):
    NONE = 0
    FAKE = 1
    REAL = 2


class SpawnError(RuntimeError):
    """The arena is too crowded to place every entity."""


class Vec2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class DangerZoneParams:
    sigma_v: float = 0.2
    delta_v: float = 0.1
    sigma_o: float = 0.2
    delta_o: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be strictly positive")


@dataclass(frozen=True)
class WorldConfig:
    arena_half_extent: float = 1.0
    n_ugv: int = 1
    n_uav: int = 0
    n_obstacle: int = 1
    n_ground_target: int = 2
    n_aerial_target: int = 0
    max_speed: float = 0.1
    max_steps: int = 70
    reach_threshold: float = 0.15
    danger: DangerZoneParams = field(default_factory=DangerZoneParams)
    meters_per_unit: float = 25.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_ugv", "n_uav", "n_obstacle", "n_ground_target", "n_aerial_target"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.max_speed > 0:
            raise ValueError("max_speed must be > 0")
        if not self.reach_threshold > 0:
            raise ValueError("reach_threshold must be > 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.arena_half_extent > 0 or not self.meters_per_unit > 0:
            raise ValueError("arena_half_extent and meters_per_unit must be > 0")


@dataclass
class AgentState:
    kind: Kind
    pos: Vec2
    vel: Vec2
    reached_target: bool
    steps_remaining: int
    landed_on: int | None
    assigned_target: int | None


@dataclass
class WorldState:
    config: WorldConfig
    ugv_pos: np.ndarray
    ugv_vel: np.ndarray
    ugv_target: np.ndarray
    uav_pos: np.ndarray
    uav_vel: np.ndarray
    uav_reached: np.ndarray
    uav_steps: np.ndarray
    uav_landed_on: np.ndarray
    uav_target: np.ndarray
    uav_home: np.ndarray
    obstacles: np.ndarray
    ground_targets: np.ndarray
    ground_reached: np.ndarray
    aerial_targets: np.ndarray
    aerial_reached: np.ndarray
    step_index: int = 0

    @property
    def n_ugv(self) -> int:
        return len(self.ugv_pos)

    @property
    def n_uav(self) -> int:
        return len(self.uav_pos)

    @property
    def uav_airborne(self) -> np.ndarray:
        return self.uav_landed_on < 0

    @property
    def uav_seeking(self) -> np.ndarray:
        return self.uav_airborne & ~self.uav_reached & (self.uav_steps > 0)

    def copy(self) -> "WorldState":
        new = object.__new__(WorldState)
        for k, v in self.__dict__.items():
            new.__dict__[k] = v.copy() if isinstance(v, np.ndarray) else v
        return new

    def agent(self, kind: Kind, index: int) -> AgentState:
        if Kind(kind) is Kind.UGV:
            t = int(self.ugv_target[index])
            return AgentState(Kind.UGV, Vec2(*self.ugv_pos[index]), Vec2(*self.ugv_vel[index]),
                              bool(self.ground_reached.all()), self.config.max_steps, None,
                              t if t >= 0 else None)
        t = int(self.uav_target[index])
        landed = int(self.uav_landed_on[index])
        return AgentState(Kind.UAV, Vec2(*self.uav_pos[index]), Vec2(*self.uav_vel[index]),
                          bool(self.uav_reached[index]), int(self.uav_steps[index]),
                          landed if landed >= 0 else None, t if t >= 0 else None)

    def all_targets_reached(self) -> bool:
        return bool(self.ground_reached.all() and self.aerial_reached.all())

    def all_uavs_landed(self) -> bool:
        return bool((self.uav_landed_on >= 0).all())

    def entity_positions(self) -> np.ndarray:
        return np.concatenate([self.ugv_pos, self.uav_pos, self.obstacles,
                               self.ground_targets, self.aerial_targets])


@dataclass(frozen=True)
class CollisionEvent:
    kind_a: str
    index_a: int
    kind_b: str
    index_b: int
    contact: Contact
    distance: float


@dataclass
class CollisionReport:
    events: list[CollisionEvent] = field(default_factory=list)

    def _count(self, contact: Contact, obstacle: bool) -> int:
        return sum(1 for e in self.events
                   if e.contact is contact and (e.kind_b == "obstacle") == obstacle)

    @property
    def real_agent_agent(self) -> int:
        return self._count(Contact.REAL, obstacle=False)

    @property
    def real_agent_obstacle(self) -> int:
        return self._count(Contact.REAL, obstacle=True)

    @property
    def fake_total(self) -> int:
        return sum(1 for e in self.events if e.contact is Contact.FAKE)


def detect_pair(d: float, delta: float, sigma: float) -> Contact:
    """Classify a centre distance against a danger zone.

    Real contact at ``d <= delta``, fake contact inside the open danger band
    ``delta < d < delta + sigma``, nothing from ``delta + sigma`` outwards.
    """
    if d <= delta:
        return Contact.REAL
    if d < delta + sigma:
        return Contact.FAKE
    return Contact.NONE


def clamp_speed(actions: np.ndarray, max_speed: float) -> np.ndarray:
    """Rescale each row so its Euclidean norm is at most ``max_speed``."""
    actions = np.asarray(actions, dtype=np.float64)
    norms = np.sqrt(np.sum(actions * actions, axis=-1, keepdims=True))
    scale = np.where(norms > max_speed, max_speed / np.where(norms > 0, norms, 1.0), 1.0)
    return actions * scale


def greedy_assign(agent_pos: np.ndarray, agent_mask: np.ndarray,
                  target_pos: np.ndarray, target_open: np.ndarray) -> np.ndarray:
    """Closest-pair-first one-to-one matching of agents to open targets.

    Pairs are taken in order of (distance, agent index, target index); each
    agent and each target is used at most once. Unmatched agents get -1.
    """
    out = np.full(len(agent_pos), -1, dtype=np.int64)
    if not (np.any(agent_mask) and np.any(target_open)):
        return out
    agents = np.flatnonzero(agent_mask)
    targets = np.flatnonzero(target_open)
    if len(agents) == 0 or len(targets) == 0:
        return out
    if len(agents) == 1 and len(targets) == 1:
        out[agents[0]] = targets[0]
        return out
    diff = agent_pos[agents][:, None, :] - target_pos[targets][None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    n_t = len(targets)
    # row-major flat index already orders ties by (agent, target)
    order = np.argsort(dist.ravel(), kind="stable")
    used_a, used_t = set(), set()
    limit = min(len(agents), n_t)
    for k in order:
        a, t = divmod(int(k), n_t)
        if a in used_a or t in used_t:
            continue
        out[agents[a]] = targets[t]
        used_a.add(a)
        used_t.add(t)
        if len(used_a) == limit:
            break
    return out


def refresh_assignments(state: WorldState) -> None:
    """Recompute vehicle-target pairings in place (UGVs and seeking UAVs)."""
    state.ugv_target = greedy_assign(state.ugv_pos, np.ones(state.n_ugv, bool),
                                     state.ground_targets, ~state.ground_reached)
    if state.n_uav == 0:
        return
    seeking = state.uav_seeking
    fresh = greedy_assign(state.uav_pos, seeking, state.aerial_targets, ~state.aerial_reached)
    state.uav_target = np.where(seeking, fresh, state.uav_target)


def spawn(config: WorldConfig, seed: int | None = None) -> WorldState:
    """Place every entity uniformly at random with pairwise spacing > delta_v."""
    seed = config.rng_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    h = config.arena_half_extent
    counts = [config.n_ugv, config.n_uav, config.n_obstacle,
              config.n_ground_target, config.n_aerial_target]
    min_gap = config.danger.delta_v
    placed: list[np.ndarray] = []
    for _ in range(sum(counts)):
        for _attempt in range(MAX_SPAWN_ATTEMPTS):
            p = rng.uniform(-h, h, size=2)
            if all(np.hypot(*(p - q)) > min_gap for q in placed):
                placed.append(p)
                break
        else:
            raise SpawnError(f"could not place entity {len(placed)} in "
                             f"{MAX_SPAWN_ATTEMPTS} attempts; arena overcrowded")
    pts = np.array(placed, dtype=np.float64).reshape(-1, 2)
    bounds = np.cumsum([0] + counts)
    chunk = [pts[bounds[k]:bounds[k + 1]] for k in range(5)]
    return make_state(config, chunk[0], chunk[1], chunk[2], chunk[3], chunk[4])


def make_state(config: WorldConfig, ugv_pos, uav_pos, obstacles, ground_targets,
               aerial_targets, uav_landed_on=None) -> WorldState:
    """Build a fresh state (step 0, nothing reached, full batteries)."""
    as2 = lambda a: np.asarray(a, dtype=np.float64).reshape(-1, 2).copy()
    ugv_pos, uav_pos = as2(ugv_pos), as2(uav_pos)
    n_uav = len(uav_pos)
    landed = (np.full(n_uav, -1, dtype=np.int64) if uav_landed_on is None
              else np.asarray(uav_landed_on, dtype=np.int64).copy())
    state = WorldState(
        config=config,
        ugv_pos=ugv_pos,
        ugv_vel=np.zeros_like(ugv_pos),
        ugv_target=np.full(len(ugv_pos), -1, dtype=np.int64),
        uav_pos=uav_pos,
        uav_vel=np.zeros_like(uav_pos),
        uav_reached=np.zeros(n_uav, dtype=bool),
        uav_steps=np.full(n_uav, config.max_steps, dtype=np.int64),
        uav_landed_on=landed,
        uav_target=np.full(n_uav, -1, dtype=np.int64),
        uav_home=np.full(n_uav, -1, dtype=np.int64),
        obstacles=as2(obstacles),
        ground_targets=as2(ground_targets),
        ground_reached=np.zeros(len(as2(ground_targets)), dtype=bool),
        aerial_targets=as2(aerial_targets),
        aerial_reached=np.zeros(len(as2(aerial_targets)), dtype=bool),
    )
    refresh_assignments(state)
    return state


def nearest_index(points: np.ndarray, p: np.ndarray) -> int:
    """Index of the point nearest to ``p`` (lowest index on ties), -1 if none."""
    if len(points) == 0:
        return -1
    d = np.sum((points - p) ** 2, axis=1)
    return int(np.argmin(d))


def home_ugv(state: WorldState, uav: int) -> int:
    """The UGV a UAV flies back to: its designated home, else the nearest."""
    h = int(state.uav_home[uav])
    return h if h >= 0 else nearest_index(state.ugv_pos, state.uav_pos[uav])


def step(state: WorldState, actions) -> tuple[WorldState, CollisionReport]:
    """Advance one unit timestep.

    ``actions`` has one ``(u, v)`` row per agent, UGVs first then UAVs.
    Rows for landed or battery-exhausted UAVs are ignored: landed UAVs ride
    their carrier, exhausted ones hover in place.
    """
    cfg = state.config
    n_ugv, n_uav = state.n_ugv, state.n_uav
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, 2) if np.size(actions) else np.zeros((0, 2))
    if actions.shape != (n_ugv + n_uav, 2):
        raise ValueError(f"expected {n_ugv + n_uav} actions, got {actions.shape[0]}")
    if not np.all(np.isfinite(actions)):
        raise ValueError("actions must be finite")
    cmd = clamp_speed(actions, cfg.max_speed)
    h = cfg.arena_half_extent
    s = state.copy()

    new_ugv = np.clip(s.ugv_pos + cmd[:n_ugv], -h, h)
    s.ugv_vel = new_ugv - s.ugv_pos
    s.ugv_pos = new_ugv

    flying = (s.uav_landed_on < 0) & (s.uav_steps > 0)
    new_uav = s.uav_pos.copy()
    new_uav[flying] = np.clip(s.uav_pos[flying] + cmd[n_ugv:][flying], -h, h)
    riding = s.uav_landed_on >= 0
    if riding.any():
        new_uav[riding] += s.ugv_vel[s.uav_landed_on[riding]]
    s.uav_vel = new_uav - s.uav_pos
    s.uav_pos = new_uav
    s.uav_steps[flying] -= 1
    s.step_index += 1

    thr = cfg.reach_threshold
    refresh_assignments(s)
    for i, t in enumerate(s.ugv_target):
        if t >= 0 and np.hypot(*(s.ugv_pos[i] - s.ground_targets[t])) <= thr:
            s.ground_reached[t] = True
    seeking = s.uav_seeking
    for i, t in enumerate(s.uav_target):
        if seeking[i] and t >= 0 and np.hypot(*(s.uav_pos[i] - s.aerial_targets[t])) <= thr:
            s.aerial_reached[t] = True
            s.uav_reached[i] = True
    if n_ugv:
        for i in np.flatnonzero((s.uav_landed_on < 0) & s.uav_reached):
            g = home_ugv(s, i)
            if np.hypot(*(s.uav_pos[i] - s.ugv_pos[g])) <= thr:
                s.uav_landed_on[i] = g
                s.uav_home[i] = -1
                s.uav_target[i] = -1
    refresh_assignments(s)
    return s, collisions(s)


def collisions(state: WorldState) -> CollisionReport:
    """All fake and real contacts in a state; UAV-UGV pairs are exempt."""
    dz = state.config.danger
    events: list[CollisionEvent] = []

    def pairs(kind, pos, idx):
        reach = dz.delta_v + dz.sigma_v
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                d = float(np.hypot(*(pos[idx[a]] - pos[idx[b]])))
                if d < reach:
                    events.append(CollisionEvent(kind, int(idx[a]), kind, int(idx[b]),
                                                 detect_pair(d, dz.delta_v, dz.sigma_v), d))

    def vs_obstacles(kind, pos, idx):
        if len(state.obstacles) == 0 or len(idx) == 0:
            return
        diff = pos[idx][:, None, :] - state.obstacles[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        reach = dz.delta_o + dz.sigma_o
        for a, o in zip(*np.nonzero(dist < reach)):
            d = float(dist[a, o])
            events.append(CollisionEvent(kind, int(idx[a]), "obstacle", int(o),
                                         detect_pair(d, dz.delta_o, dz.sigma_o), d))

    ugvs = np.arange(state.n_ugv)
    uavs = np.flatnonzero(state.uav_airborne)
    pairs("ugv", state.ugv_pos, ugvs)
    pairs("uav", state.uav_pos, uavs)
    vs_obstacles("ugv", state.ugv_pos, ugvs)
    vs_obstacles("uav", state.uav_pos, uavs)
    return CollisionReport(events)


# -- observations ------------------------------------------------------------

@dataclass(frozen=True)
class ObsLayout:
    """Fixed slot counts for a policy input built from a world of any size."""

    n_targets: int
    n_obstacles: int
    n_peers: int

    def size(self, kind: Kind) -> int:
        base = 4 + 2 * (self.n_targets + self.n_obstacles + self.n_peers)
        return base + 3 if Kind(kind) is Kind.UAV else base


def layout_for(config: WorldConfig, kind: Kind) -> ObsLayout:
    if Kind(kind) is Kind.UGV:
        return ObsLayout(config.n_ground_target, config.n_obstacle, max(config.n_ugv - 1, 0))
    return ObsLayout(config.n_aerial_target, config.n_obstacle, max(config.n_uav - 1, 0))


def _phantom(p: np.ndarray) -> np.ndarray:
    # stand-in for an empty slot: the unit-arena corner farthest from the agent
    q = np.clip(p, -1.0, 1.0)
    corner = np.where(q >= 0.0, -1.0, 1.0)
    return corner - q


def observe(state: WorldState, agent: int, kind: Kind, layout: ObsLayout | None = None) -> np.ndarray:
    """Local observation vector of one agent.

    Layout: own velocity, own position, relative positions of same-kind
    targets (zero once reached), obstacles, same-kind peers; UAVs append the
    relative position of their home/nearest UGV and the reached flag.

    Without ``layout`` every entity is listed in index order. With a layout
    the slots are filled selectively (assigned target first, then nearest
    open targets; nearest obstacles and airborne peers) and padded, so a
    policy trained on one world size can drive a larger one.
    """
    kind = Kind(kind)
    if kind is Kind.UGV:
        pos, vel = state.ugv_pos, state.ugv_vel
        targets, reached, assigned = state.ground_targets, state.ground_reached, state.ugv_target
        peers = np.arange(state.n_ugv)
    else:
        pos, vel = state.uav_pos, state.uav_vel
        targets, reached, assigned = state.aerial_targets, state.aerial_reached, state.uav_target
        peers = np.flatnonzero(state.uav_airborne) if layout is not None else np.arange(state.n_uav)
    p = pos[agent]
    peers = peers[peers != agent]
    parts = [vel[agent], p]

    if layout is None:
        rel_t = targets - p
        rel_t[reached] = 0.0
        parts += [rel_t.ravel(), (state.obstacles - p).ravel(), (pos[peers] - p).ravel()]
    else:
        open_t = np.flatnonzero(~reached)
        order = sorted(open_t, key=lambda t: (t != assigned[agent], np.sum((targets[t] - p) ** 2), t))
        slots = np.zeros((layout.n_targets, 2))
        for k, t in enumerate(order[:layout.n_targets]):
            slots[k] = targets[t] - p
        parts.append(slots.ravel())
        for pts in (state.obstacles, pos[peers]):
            n_slots = layout.n_obstacles if pts is state.obstacles else layout.n_peers
            rel = pts - p
            rel = rel[np.lexsort((np.arange(len(rel)), np.sum(rel * rel, axis=1)))][:n_slots]
            pad = np.tile(_phantom(p), (n_slots - len(rel), 1))
            parts.append(np.concatenate([rel.reshape(-1, 2), pad]).ravel())

    if kind is Kind.UAV:
        g = home_ugv(state, agent) if state.n_ugv else -1
        parts.append(state.ugv_pos[g] - p if g >= 0 else np.zeros(2))
        parts.append([1.0 if state.uav_reached[agent] else 0.0])
    return np.concatenate([np.asarray(x, dtype=np.float64).ravel() for x in parts])


# -- constraint checking -------------------------------------------------------

CONSTRAINTS = ("aerial_coverage", "ground_coverage", "uav_obstacle",
               "ugv_obstacle", "uav_separation", "ugv_separation", "uav_return")


@dataclass(frozen=True)
class ConstraintResult:
    satisfied: bool
    first_step: int | None = None


@dataclass
class ConstraintReport:
    results: dict[str, ConstraintResult]

    @property
    def ok(self) -> bool:
        return all(r.satisfied for r in self.results.values())

    def violated(self) -> list[str]:
        return [k for k, r in self.results.items() if not r.satisfied]


def _coverage(paths: Sequence[np.ndarray], targets: np.ndarray, thr: float, final: int) -> ConstraintResult:
    for t in targets:
        if not any(len(p) and np.min(np.hypot(*(p - t).T)) <= thr for p in paths):
            return ConstraintResult(False, final)
    return ConstraintResult(True)


def _obstacle_hits(paths, masks, obstacles, delta) -> ConstraintResult:
    first = None
    for path, mask in zip(paths, masks):
        if len(obstacles) == 0:
            break
        d = np.sqrt(np.sum((path[:, None, :] - obstacles[None, :, :]) ** 2, axis=-1)).min(axis=1)
        hits = np.flatnonzero((d <= delta) & mask)
        if len(hits):
            first = int(hits[0]) if first is None else min(first, int(hits[0]))
    return ConstraintResult(first is None, first)


def _separation(paths, masks, delta) -> ConstraintResult:
    first = None
    for a in range(len(paths)):
        for b in range(a + 1, len(paths)):
            n = min(len(paths[a]), len(paths[b]))
            d = np.hypot(*(paths[a][:n] - paths[b][:n]).T)
            hits = np.flatnonzero((d <= delta) & masks[a][:n] & masks[b][:n])
            if len(hits):
                first = int(hits[0]) if first is None else min(first, int(hits[0]))
    return ConstraintResult(first is None, first)


def check_constraints(episode: EpisodeRecord, config: WorldConfig | None = None) -> ConstraintReport:
    """Check an episode log against the coverage, safety and return constraints.

    Coverage counts a target as visited when some path point of the matching
    vehicle kind lies within ``reach_threshold``; obstacle and separation
    constraints flag real-collision distances; the return constraint asks
    every UAV to end within ``reach_threshold`` of its nearest UGV.
    """
    cfg = config or WorldConfig()
    thr, dz = cfg.reach_threshold, cfg.danger
    ugv_paths = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in episode.ugv_paths]
    uav_paths = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in episode.uav_paths]
    air = [np.asarray(m, dtype=bool) for m in episode.uav_airborne] or [np.ones(len(p), bool) for p in uav_paths]
    ground = [np.ones(len(p), bool) for p in ugv_paths]
    final = max([len(p) for p in ugv_paths + uav_paths] + [1]) - 1
    obstacles = np.asarray(episode.obstacles, dtype=np.float64).reshape(-1, 2)

    results = {
        "aerial_coverage": _coverage(uav_paths, np.asarray(episode.aerial_targets).reshape(-1, 2), thr, final),
        "ground_coverage": _coverage(ugv_paths, np.asarray(episode.ground_targets).reshape(-1, 2), thr, final),
        "uav_obstacle": _obstacle_hits(uav_paths, air, obstacles, dz.delta_o),
        "ugv_obstacle": _obstacle_hits(ugv_paths, ground, obstacles, dz.delta_o),
        "uav_separation": _separation(uav_paths, air, dz.delta_v),
        "ugv_separation": _separation(ugv_paths, ground, dz.delta_v),
    }
    ret = ConstraintResult(True)
    if uav_paths:
        ends = np.array([p[-1] for p in ugv_paths]).reshape(-1, 2)
        for p in uav_paths:
            if len(ends) == 0 or np.min(np.hypot(*(ends - p[-1]).T)) > thr:
                ret = ConstraintResult(False, len(p) - 1)
                break
    results["uav_return"] = ret
    return ConstraintReport(results)


# -- episode bookkeeping -------------------------------------------------------

class EpisodeLog:
    """Accumulates states and collision reports of one episode."""

    def __init__(self, initial: WorldState):
        self.states = [initial]
        self.reports: list[CollisionReport] = [CollisionReport()]

    def add(self, state: WorldState, report: CollisionReport) -> None:
        self.states.append(state)
        self.reports.append(report)

    @property
    def alpha(self) -> int:
        return sum(r.real_agent_agent for r in self.reports)

    @property
    def beta(self) -> int:
        return sum(r.real_agent_obstacle for r in self.reports)

    def to_record(self, completed: bool | None = None) -> EpisodeRecord:
        first, last = self.states[0], self.states[-1]
        reached = int(last.ground_reached.sum() + last.aerial_reached.sum())
        total = len(last.ground_reached) + len(last.aerial_reached)
        if completed is None:
            completed = last.all_targets_reached() and last.all_uavs_landed()
        return EpisodeRecord(
            phi=last.step_index - first.step_index,
            alpha=self.alpha,
            beta=self.beta,
            completed=bool(completed),
            targets_total=total,
            targets_reached=reached,
            ugv_paths=[np.array([s.ugv_pos[i] for s in self.states]) for i in range(first.n_ugv)],
            uav_paths=[np.array([s.uav_pos[i] for s in self.states]) for i in range(first.n_uav)],
            uav_airborne=[np.array([s.uav_landed_on[i] < 0 for s in self.states]) for i in range(first.n_uav)],
            obstacles=first.obstacles.copy(),
            ground_targets=first.ground_targets.copy(),
            aerial_targets=first.aerial_targets.copy(),
        )

    def csv_rows(self) -> list[tuple]:
        """Rows ``(step, entity_kind, entity_id, x, y, event)``."""
        rows = []
        prev = None
        for state, report in zip(self.states, self.reports):
            ev: dict[tuple[str, int], list[str]] = {}
            for e in report.events:
                tag = "real" if e.contact is Contact.REAL else "fake"
                ev.setdefault((e.kind_a, e.index_a), []).append(f"{tag}:{e.kind_b}{e.index_b}")
                ev.setdefault((e.kind_b, e.index_b), []).append(f"{tag}:{e.kind_a}{e.index_a}")
            for i, p in enumerate(state.ugv_pos):
                rows.append((state.step_index, "ugv", i, p[0], p[1], ";".join(ev.get(("ugv", i), []))))
            for i, p in enumerate(state.uav_pos):
                tags = list(ev.get(("uav", i), []))
                if prev is not None and prev.uav_landed_on[i] < 0 <= state.uav_landed_on[i]:
                    tags.append(f"landed:ugv{state.uav_landed_on[i]}")
                rows.append((state.step_index, "uav", i, p[0], p[1], ";".join(tags)))
            for i, p in enumerate(state.obstacles):
                rows.append((state.step_index, "obstacle", i, p[0], p[1], ";".join(ev.get(("obstacle", i), []))))
            for kind, pts, flags in (("ground_target", state.ground_targets, state.ground_reached),
                                     ("aerial_target", state.aerial_targets, state.aerial_reached)):
                before = None if prev is None else (prev.ground_reached if kind == "ground_target" else prev.aerial_reached)
                for i, p in enumerate(pts):
                    tag = "reached" if flags[i] and (before is None or not before[i]) and prev is not None else ""
                    rows.append((state.step_index, kind, i, p[0], p[1], tag))
            prev = state
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("step", "entity_kind", "entity_id", "x", "y", "event"))
        for row in self.csv_rows():
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        return buf.getvalue()
