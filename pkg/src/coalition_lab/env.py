"""Per-phase training scenarios wrapped as a multi-agent environment.

Phase ``ugv`` trains the ground vehicles alone against ground targets and
obstacles. Phase ``uav`` trains the aerial vehicles against aerial targets;
the UGVs in that world are not learners but replay recorded trajectories
of an already trained UGV team (the "demo tracks"), giving the UAVs a
moving landing pad.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .reward import RewardBreakdown, RewardParams, uav_reward, ugv_reward
from .world import (CollisionReport, EpisodeLog, Kind, WorldConfig, WorldState,
                    layout_for, make_state, observe, refresh_assignments, spawn, step)

COMPONENTS = ("r1", "r2", "r3", "r4", "r5", "r6", "r7")


@dataclass
class StepResult:
    observations: list[np.ndarray]
    rewards: np.ndarray
    terminal: bool
    truncated: bool
    breakdowns: list[RewardBreakdown]
    report: CollisionReport

    @property
    def done(self) -> bool:
        return self.terminal or self.truncated


class CoalitionEnv:
    """Multi-agent environment over :mod:`coalition_lab.world` for one vehicle kind."""

    def __init__(self, config: WorldConfig, kind: Kind, reward: RewardParams | None = None,
                 demo_tracks: Sequence[np.ndarray] | None = None):
        self.kind = Kind(kind)
        if self.kind is Kind.UGV:
            config = replace(config, n_uav=0, n_aerial_target=0)
        else:
            config = replace(config, n_ground_target=0)
            if demo_tracks:
                config = replace(config, n_ugv=int(demo_tracks[0].shape[1]))
        self.config = config
        self.reward = reward or RewardParams(danger=config.danger)
        self.demo_tracks = list(demo_tracks) if demo_tracks else []
        self.layout = layout_for(config, self.kind)
        self.state: WorldState | None = None
        self.log: EpisodeLog | None = None
        self._track: np.ndarray | None = None

    @property
    def n_agents(self) -> int:
        return self.config.n_ugv if self.kind is Kind.UGV else self.config.n_uav

    @property
    def obs_dim(self) -> int:
        return self.layout.size(self.kind)

    def reset(self, rng: np.random.Generator) -> list[np.ndarray]:
        seed = int(rng.integers(0, 2**63 - 1))
        state = spawn(self.config, seed)
        if self.kind is Kind.UAV and self.demo_tracks:
            self._track = self.demo_tracks[int(rng.integers(len(self.demo_tracks)))]
            state = make_state(self.config, self._track[0], state.uav_pos, state.obstacles,
                               state.ground_targets, state.aerial_targets)
        else:
            self._track = None
        self.state = state
        self.log = EpisodeLog(state)
        return self.observations()

    def observations(self) -> list[np.ndarray]:
        return [observe(self.state, i, self.kind) for i in range(self.n_agents)]

    def _ugv_script(self) -> np.ndarray:
        n = self.state.n_ugv
        if self._track is None:
            return np.zeros((n, 2))
        t = self.state.step_index
        last = len(self._track) - 1
        return self._track[min(t + 1, last)] - self._track[min(t, last)]

    def step(self, actions) -> StepResult:
        actions = np.asarray(actions, dtype=np.float64).reshape(self.n_agents, 2)
        if self.kind is Kind.UGV:
            joint = actions
        else:
            joint = np.concatenate([self._ugv_script(), actions])
        state, report = step(self.state, joint)
        self.state = state
        self.log.add(state, report)
        if self.kind is Kind.UGV:
            breakdowns = [ugv_reward(state, i, self.reward) for i in range(self.n_agents)]
            terminal = bool(state.ground_reached.all())
        else:
            breakdowns = [uav_reward(state, i, self.reward) for i in range(self.n_agents)]
            terminal = bool(state.aerial_reached.all() and state.all_uavs_landed())
        truncated = not terminal and state.step_index >= self.config.max_steps
        rewards = np.array([b.total for b in breakdowns])
        return StepResult(self.observations(), rewards, terminal, truncated, breakdowns, report)


def team_components(breakdowns: Sequence[RewardBreakdown]) -> dict[str, float]:
    """Mean over agents of each reward component (absent components are 0)."""
    n = len(breakdowns)
    return {c: sum(b.components.get(c, 0.0) for b in breakdowns) / n for c in COMPONENTS}


# -- demo tracks ---------------------------------------------------------------

def tracks_to_csv(tracks: Sequence[np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("episode", "step", "ugv", "x", "y"))
    for e, track in enumerate(tracks):
        for t in range(track.shape[0]):
            for g in range(track.shape[1]):
                w.writerow((e, t, g, repr(float(track[t, g, 0])), repr(float(track[t, g, 1]))))
    return buf.getvalue()


def tracks_from_csv(text: str) -> list[np.ndarray]:
    rows = list(csv.DictReader(io.StringIO(text)))
    episodes: dict[int, dict[tuple[int, int], tuple[float, float]]] = {}
    for lineno, r in enumerate(rows, start=2):
        try:
            key = (int(r["step"]), int(r["ugv"]))
            episodes.setdefault(int(r["episode"]), {})[key] = (float(r["x"]), float(r["y"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"demo track line {lineno}: {exc}") from exc
    tracks = []
    for e in sorted(episodes):
        cells = episodes[e]
        n_t = max(k[0] for k in cells) + 1
        n_g = max(k[1] for k in cells) + 1
        arr = np.zeros((n_t, n_g, 2))
        for (t, g), xy in cells.items():
            arr[t, g] = xy
        tracks.append(arr)
    return tracks
