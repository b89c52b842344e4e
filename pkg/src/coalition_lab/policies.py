"""Frozen vehicle policies used at mission time, plus their on-disk form.

A policy maps ``(agent index, observation)`` to a velocity command in
arena units. Learned policies carry the :class:`ObsLayout` they were
trained with, so mission worlds of any size are observed the same way.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import neural
from .neural import MlpParams
from .world import Kind, ObsLayout

POLICY_FORMAT_VERSION = 1


class VehiclePolicy(Protocol):
    layout: ObsLayout | None
    max_speed: float

    def act(self, index: int, obs: np.ndarray) -> np.ndarray: ...


@dataclass
class ActorPolicy:
    """Deterministic per-agent actors; agent ``i`` uses actor ``i mod n``."""

    actors: Sequence[MlpParams]
    layout: ObsLayout
    max_speed: float

    def act(self, index: int, obs: np.ndarray) -> np.ndarray:
        actor = self.actors[index % len(self.actors)]
        if actor.input_dim != len(obs):
            raise ValueError(f"observation has {len(obs)} entries, policy expects {actor.input_dim}")
        return self.max_speed * np.clip(neural.forward(actor, obs), -1.0, 1.0)


@dataclass
class SharedMeanPolicy:
    """Mean action of a shared Gaussian policy (noise-free execution)."""

    net: MlpParams
    layout: ObsLayout
    max_speed: float

    def act(self, index: int, obs: np.ndarray) -> np.ndarray:
        if self.net.input_dim != len(obs):
            raise ValueError(f"observation has {len(obs)} entries, policy expects {self.net.input_dim}")
        return self.max_speed * np.clip(neural.forward(self.net, obs), -1.0, 1.0)


@dataclass
class StraightLinePolicy:
    """Head straight for the first target slot at full speed.

    UAVs whose reached flag is set head for their home UGV instead. No
    learning and no obstacle avoidance; used for kinematics checks.
    """

    kind: Kind
    layout: ObsLayout | None
    max_speed: float

    def act(self, index: int, obs: np.ndarray) -> np.ndarray:
        if Kind(self.kind) is Kind.UAV and obs[-1] > 0.5:
            rel = obs[-3:-1]
        else:
            rel = obs[4:6]
        d = float(np.hypot(*rel))
        if d == 0.0:
            return np.zeros(2)
        return rel * min(1.0, self.max_speed / d)


@dataclass
class TrainedModels:
    ugv: VehiclePolicy | None
    uav: VehiclePolicy | None

    def require(self, kind: Kind) -> VehiclePolicy:
        policy = self.ugv if Kind(kind) is Kind.UGV else self.uav
        if policy is None:
            raise LookupError(f"no {Kind(kind).value.upper()} model loaded")
        return policy


# -- persistence -------------------------------------------------------------------

def save_policy(policy: ActorPolicy | SharedMeanPolicy, directory, kind: Kind,
                seed: int | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nets = list(policy.actors) if isinstance(policy, ActorPolicy) else [policy.net]
    for i, net in enumerate(nets):
        neural.save(net, directory / f"actor_{i}.ckpt", seed)
    meta = {
        "format_version": POLICY_FORMAT_VERSION,
        "kind": Kind(kind).value,
        "algo": "maddpg" if isinstance(policy, ActorPolicy) else "mappo",
        "n_actors": len(nets),
        "layout": [policy.layout.n_targets, policy.layout.n_obstacles, policy.layout.n_peers],
        "max_speed": repr(float(policy.max_speed)),
    }
    tmp = directory / "policy.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    tmp.replace(directory / "policy.json")


def load_policy(directory) -> tuple[Kind, ActorPolicy | SharedMeanPolicy]:
    directory = Path(directory)
    meta_path = directory / "policy.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{directory}: no policy.json (not a trained policy directory)")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != POLICY_FORMAT_VERSION:
        raise neural.CheckpointError(f"{meta_path}: unsupported policy format {meta.get('format_version')}")
    layout = ObsLayout(*meta["layout"])
    kind = Kind(meta["kind"])
    nets = [neural.load(directory / f"actor_{i}.ckpt") for i in range(meta["n_actors"])]
    expected = layout.size(kind)
    for net in nets:
        if net.input_dim != expected:
            raise neural.CheckpointError(
                f"{directory}: network input {net.input_dim} does not match layout size {expected}")
    max_speed = float(meta["max_speed"])
    if meta["algo"] == "maddpg":
        return kind, ActorPolicy(nets, layout, max_speed)
    return kind, SharedMeanPolicy(nets[0], layout, max_speed)
