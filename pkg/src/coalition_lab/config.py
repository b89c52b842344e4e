"""Experiment configuration: presets and a ``key = value`` text format.

Keys are dotted paths into :class:`ExperimentConfig` (``world.max_speed``,
``maddpg.batch_size``, ``world.danger.sigma_v``). Values are Python
literals, so floats round-trip exactly through ``repr``.
"""
from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass, field, fields, is_dataclass, replace

from .maddpg import MaddpgConfig
from .mappo import MappoConfig
from .mission import MissionConfig, Mode
from .reward import RewardParams
from .world import WorldConfig
from .zoning import MeanShiftConfig

PRESETS = ("table2", "desk", "iadrl")


@dataclass(frozen=True)
class MissionSettings:
    k_per_zone: int = 1
    mode: str = Mode.ZONED.value
    coalition: str = "1x2"
    n_coalitions: int = 2
    n_targets: int = 8
    n_clusters: int = 2
    n_obstacles: int = -1  # -1: uniform over 1..6 per episode
    arena_size_m: float = 2000.0
    zone_step_limit: int = 140
    return_margin: float = 1.2
    episodes: int = 200


@dataclass(frozen=True)
class IoSettings:
    save_interval: int = 0
    demo_episodes: int = 50
    eval_episodes: int = 100


@dataclass(frozen=True)
class RewardSettings:
    t1_scale: float = 1.0
    max_pair_penalty: float = 1.0
    max_obstacle_penalty: float = 1.0
    r_t: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    algo: str = "maddpg"
    world: WorldConfig = field(default_factory=WorldConfig)
    uav_world: WorldConfig = field(default_factory=lambda: WorldConfig(
        n_ugv=1, n_uav=2, n_obstacle=1, n_ground_target=0, n_aerial_target=2))
    reward: RewardSettings = field(default_factory=RewardSettings)
    zoning: MeanShiftConfig = field(default_factory=lambda: MeanShiftConfig(radius=25.0))
    maddpg: MaddpgConfig = field(default_factory=MaddpgConfig)
    mappo: MappoConfig = field(default_factory=MappoConfig)
    mission: MissionSettings = field(default_factory=MissionSettings)
    io: IoSettings = field(default_factory=IoSettings)

    def __post_init__(self):
        if self.algo not in ("maddpg", "mappo"):
            raise ValueError(f"algo must be 'maddpg' or 'mappo', got {self.algo!r}")
        Mode(self.mission.mode)

    def reward_params(self, world: WorldConfig) -> RewardParams:
        r = self.reward
        return RewardParams(r.t1_scale, r.max_pair_penalty, r.max_obstacle_penalty, r.r_t, world.danger)

    def mission_config(self) -> MissionConfig:
        return MissionConfig(world=self.world, zone_step_limit=self.mission.zone_step_limit,
                             return_margin=self.mission.return_margin)


def preset(name: str) -> ExperimentConfig:
    """Shipped configurations.

    ``desk``: one UGV, two ground targets, one obstacle (UAV phase: two
    UAVs, two aerial targets); the scale the acceptance runs use.
    ``table2``: larger training worlds (two UGVs, three obstacles, four
    UAVs in the UAV phase) and 1x3 coalitions. ``iadrl``: the desk models flown as a single 1x1 coalition
    without zoning (the simplified baseline).
    """
    base = ExperimentConfig()
    if name == "desk":
        return base
    if name == "table2":
        return replace(
            base,
            world=replace(base.world, n_ugv=2, n_obstacle=3, n_ground_target=3),
            uav_world=replace(base.uav_world, n_ugv=2, n_uav=4, n_obstacle=3, n_aerial_target=4),
            mission=replace(base.mission, n_targets=10, n_coalitions=2, coalition="1x3"),
        )
    if name == "iadrl":
        return replace(base, mission=replace(base.mission, coalition="1x1", n_coalitions=1,
                                             mode=Mode.NO_ZONING.value))
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


# -- text format -----------------------------------------------------------------------

def _flatten(obj, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if is_dataclass(value):
            out += _flatten(value, key + ".")
        else:
            out.append((key, value))
    return out


def dumps(config: ExperimentConfig) -> str:
    lines = [f"{key} = {value!r}" for key, value in _flatten(config)]
    return "\n".join(lines) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(dumps(config).encode()).hexdigest()[:16]


def _set_path(obj, path: list[str], value):
    head = path[0]
    if not is_dataclass(obj) or head not in {f.name for f in fields(obj)}:
        raise KeyError(head)
    if len(path) == 1:
        current = getattr(obj, head)
        if is_dataclass(current):
            raise KeyError(head)
        if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        return replace(obj, **{head: value})
    return replace(obj, **{head: _set_path(getattr(obj, head), path[1:], value)})


def apply_overrides(config: ExperimentConfig, pairs: list[tuple[str, str]], source: str = "<overrides>",
                    lines: list[int] | None = None) -> ExperimentConfig:
    for n, (key, raw) in enumerate(pairs):
        where = f"{source}:{lines[n]}" if lines else source
        try:
            value = ast.literal_eval(raw.strip())
        except (ValueError, SyntaxError):
            value = raw.strip()  # bare words are strings
        try:
            config = _set_path(config, key.strip().split("."), value)
        except KeyError:
            raise ValueError(f"{where}: unknown config key {key.strip()!r}") from None
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{where}: bad value for {key.strip()!r}: {exc}") from None
    return config


def loads(text: str, base: ExperimentConfig | None = None, source: str = "<config>") -> ExperimentConfig:
    """Parse ``key = value`` lines over ``base`` (defaults if omitted)."""
    pairs, lines = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = stripped.split("=", 1)
        pairs.append((key, raw))
        lines.append(lineno)
    return apply_overrides(base or ExperimentConfig(), pairs, source, lines)


def load(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read(), base, str(path))


def save(config: ExperimentConfig, path) -> None:
    from pathlib import Path
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(config))
    tmp.replace(path)
