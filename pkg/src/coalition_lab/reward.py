"""Shaped per-step rewards for UGVs (r1..r3) and UAVs (r4..r7).

Every component is a penalty (<= 0). Distance terms are linear in the
distance; danger-zone terms grow linearly with the overlap of the two
danger zones and saturate at real contact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import DangerZoneParams, WorldState, home_ugv


@dataclass(frozen=True)
class RewardParams:
    t1_scale: float = 1.0
    max_pair_penalty: float = 1.0
    max_obstacle_penalty: float = 1.0
    r_t: float = 1.0
    danger: DangerZoneParams = field(default_factory=DangerZoneParams)

    def __post_init__(self):
        for name in ("t1_scale", "max_pair_penalty", "max_obstacle_penalty", "r_t"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class RewardBreakdown:
    components: dict[str, float]

    @property
    def total(self) -> float:
        return float(sum(self.components.values()))


def target_distance_reward(targets, reached, agents, params: RewardParams) -> float:
    """``-t1_scale`` times the summed distance from each open target to its closest agent."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    agents = np.asarray(agents, dtype=np.float64).reshape(-1, 2)
    open_t = targets[~np.asarray(reached, dtype=bool)] if len(targets) else targets
    if len(open_t) == 0 or len(agents) == 0:
        return 0.0
    diff = open_t[:, None, :] - agents[None, :, :]
    nearest = np.sqrt(np.sum(diff * diff, axis=-1)).min(axis=1)
    return -params.t1_scale * float(nearest.sum())


def pair_penalty(d: float, delta: float, sigma: float, max_penalty: float) -> float:
    """Danger-zone overlap penalty, saturating at ``-max_penalty`` for ``d <= delta``."""
    if d < 0:
        raise ValueError("distance must be non-negative")
    overlap = delta + sigma - d
    if overlap <= 0:
        return 0.0
    return -max_penalty * min(overlap / sigma, 1.0)


def _penalty_sum(p: np.ndarray, others: np.ndarray, delta: float, sigma: float, cap: float) -> float:
    if len(others) == 0:
        return 0.0
    d = np.sqrt(np.sum((others - p) ** 2, axis=1))
    overlap = delta + sigma - d
    return -cap * float(np.sum(np.clip(overlap / sigma, 0.0, 1.0)))


def return_reward(reached: bool, d_h: float, params: RewardParams) -> float:
    if d_h < 0:
        raise ValueError("d_h must be non-negative")
    if not reached:
        return -params.r_t
    return -params.t1_scale * d_h


def ugv_reward(state: WorldState, agent: int, params: RewardParams) -> RewardBreakdown:
    dz = params.danger
    p = state.ugv_pos[agent]
    peers = np.delete(state.ugv_pos, agent, axis=0)
    return RewardBreakdown({
        "r1": target_distance_reward(state.ground_targets, state.ground_reached, state.ugv_pos, params),
        "r2": _penalty_sum(p, peers, dz.delta_v, dz.sigma_v, params.max_pair_penalty),
        "r3": _penalty_sum(p, state.obstacles, dz.delta_o, dz.sigma_o, params.max_obstacle_penalty),
    })


def uav_reward(state: WorldState, agent: int, params: RewardParams) -> RewardBreakdown:
    """UAV reward; r4 is zero once this UAV has reached its target.

    Only seeking UAVs count as the "closest agent" for r4, so a UAV that is
    already flying home does not mask an open target. Landed UAVs ride their
    carrier and take no danger-zone penalties.
    """
    dz = params.danger
    p = state.uav_pos[agent]
    reached = bool(state.uav_reached[agent])
    if reached:
        r4 = 0.0
    else:
        seekers = state.uav_pos[state.uav_seeking | (np.arange(state.n_uav) == agent)]
        r4 = target_distance_reward(state.aerial_targets, state.aerial_reached, seekers, params)
    airborne = bool(state.uav_landed_on[agent] < 0)
    if airborne:
        mask = state.uav_airborne.copy()
        mask[agent] = False
        r5 = _penalty_sum(p, state.uav_pos[mask], dz.delta_v, dz.sigma_v, params.max_pair_penalty)
        r6 = _penalty_sum(p, state.obstacles, dz.delta_o, dz.sigma_o, params.max_obstacle_penalty)
    else:
        r5 = r6 = 0.0
    if state.n_ugv:
        d_h = float(np.hypot(*(state.ugv_pos[home_ugv(state, agent)] - p)))
    else:
        d_h = 0.0
    return RewardBreakdown({"r4": r4, "r5": r5, "r6": r6, "r7": return_reward(reached, d_h, params)})
