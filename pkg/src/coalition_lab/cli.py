"""Command-line entry point: train, evaluate, zone, mission, report.

Outputs go under ``--out`` or, failing that, ``$COALITION_LAB_OUT`` (default
``./runs``). Every artifact directory gets a ``manifest.json`` and the full
``config.cfg`` needed to re-run it; all files are written atomically.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, maddpg, mappo, neural
from .env import CoalitionEnv, tracks_from_csv, tracks_to_csv
from .evaluation import (METRIC_TABLE_HEADER, episode_rows, metric_rows, read_metric_table,
                         render_metric_chart, rows_to_csv, summarize)
from .mission import (Mode, parse_coalitions, generate_scenario, plan, render_zone_trace,
                      run_mission)
from .policies import (POLICY_FORMAT_VERSION, ActorPolicy, SharedMeanPolicy, TrainedModels,
                       load_policy, save_policy)
from .world import EpisodeLog, Kind
from .zoning import MeanShiftConfig, assign_zones, coverage_ok

log = logging.getLogger("coalition_lab")

OUT_ENV = "COALITION_LAB_OUT"
CSV_FORMAT_VERSION = 1
CURVE_HEADER = ("episode", "return", "r1", "r2", "r3", "r4", "r5", "r6", "r7",
                "collisions", "steps", "completed")
SWEEPS = {
    "targets": ["4", "6", "8", "10", "12"],
    "coalitions": ["1-1", "2-6", "2-8", "3-6", "3-8", "4-8"],
    "radius": ["10", "15", "20", "25"],
}


class CliError(Exception):
    """An operator-facing failure; printed without a traceback."""


# -- io helpers -------------------------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def out_root(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV, "runs"))


def git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=10)
        return res.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(directory: Path, command: str, config: cfgmod.ExperimentConfig, extra: dict | None = None):
    cfgmod.save(config, directory / "config.cfg")
    manifest = {
        "command": command,
        "package_version": __version__,
        "config_hash": cfgmod.config_hash(config),
        "seed": config.seed,
        "git_describe": git_describe(),
        "format_versions": {"checkpoint": neural.FORMAT_VERSION, "policy": POLICY_FORMAT_VERSION,
                            "csv": CSV_FORMAT_VERSION},
    }
    manifest.update(extra or {})
    atomic_write(directory / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def build_config(args) -> cfgmod.ExperimentConfig:
    config = cfgmod.preset(args.preset)
    if getattr(args, "config", None):
        config = cfgmod.load(args.config, config)
    pairs = [tuple(s.split("=", 1)) for s in getattr(args, "set", None) or []]
    if any(len(p) != 2 for p in pairs):
        raise CliError("--set expects key=value")
    config = cfgmod.apply_overrides(config, pairs, "--set")
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "algo", None):
        updates["algo"] = args.algo
    if updates:
        config = replace(config, **updates)
    if getattr(args, "episodes", None) is not None and getattr(args, "command", "") == "train":
        config = replace(config, maddpg=replace(config.maddpg, episodes=args.episodes),
                         mappo=replace(config.mappo, episodes=args.episodes))
    return config


def curve_csv(rows) -> str:
    return rows_to_csv(CURVE_HEADER, [[row[k] for k in CURVE_HEADER] for row in rows])


def _demo_tracks(ugv_dir: Path) -> list[np.ndarray]:
    path = ugv_dir / "demo_tracks.csv"
    if not path.exists():
        raise CliError(f"UAV phase needs a trained UGV run: {path} not found "
                       f"(run `train --phase ugv` first or pass --ugv-dir)")
    tracks = tracks_from_csv(path.read_text())
    if not tracks:
        raise CliError(f"{path}: no demo tracks recorded")
    return tracks


def make_env(config: cfgmod.ExperimentConfig, kind: Kind, tracks=None) -> CoalitionEnv:
    world = config.world if kind is Kind.UGV else config.uav_world
    return CoalitionEnv(world, kind, config.reward_params(world), tracks)


# -- commands -----------------------------------------------------------------------------

def cmd_train(args) -> int:
    config = build_config(args)
    kind = Kind(args.phase)
    root = out_root(args.out)
    tracks = _demo_tracks(Path(args.ugv_dir) if args.ugv_dir else root / "ugv") if kind is Kind.UAV else None
    out = root / kind.value
    out.mkdir(parents=True, exist_ok=True)
    factory = lambda: make_env(config, kind, tracks)
    env = factory()
    save_dir = out / "checkpoints" if config.io.save_interval else None
    progress = lambda e, row: log.info("episode %d return %.3f", e, row["return"])
    if config.algo == "maddpg":
        result = maddpg.train(factory, config.maddpg, config.seed, save_dir, config.io.save_interval, progress)
        policy = ActorPolicy(result.actors, env.layout, env.config.max_speed)
    else:
        result = mappo.train(factory, config.mappo, config.seed, save_dir, config.io.save_interval, progress)
        policy = SharedMeanPolicy(result.policy.net, env.layout, env.config.max_speed)
    save_policy(policy, out / "policy", kind, config.seed)
    atomic_write(out / "curve.csv", curve_csv(result.curve))
    extra = {"phase": kind.value, "algo": config.algo}
    if kind is Kind.UGV:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        tracks_out = []
        for _ in range(config.io.demo_episodes):
            maddpg.run_episode(env, lambda i, o: policy.act(i, o), rng)
            tracks_out.append(np.array([s.ugv_pos for s in env.log.states]))
        atomic_write(out / "demo_tracks.csv", tracks_to_csv(tracks_out))
    write_manifest(out, "train", config, extra)
    print(f"trained {config.algo} {kind.value} policy -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    config = build_config(args)
    policy_dir = Path(args.policy)
    kind, policy = load_policy(policy_dir)
    root = out_root(args.out)
    tracks = _demo_tracks(Path(args.ugv_dir) if args.ugv_dir else policy_dir.parent.parent / "ugv") \
        if kind is Kind.UAV else None
    env = make_env(config, kind, tracks)
    if env.obs_dim != policy.layout.size(kind) or env.layout != policy.layout:
        raise CliError(f"model expects observation layout {policy.layout} ({policy.layout.size(kind)} "
                       f"values) but the configured world gives {env.layout} ({env.obs_dim} values)")
    episodes = args.episodes if args.episodes is not None else config.io.eval_episodes
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    records, curve = [], []
    for e in range(episodes):
        row = maddpg.run_episode(env, lambda i, o: policy.act(i, o), rng)
        curve.append({"episode": e, **row})
        records.append(env.log.to_record())
    out = root / f"eval_{kind.value}"
    header, rows = episode_rows(records)
    atomic_write(out / "episodes.csv", rows_to_csv(header, rows))
    atomic_write(out / "curve.csv", curve_csv(curve))
    atomic_write(out / "metrics.csv", rows_to_csv(METRIC_TABLE_HEADER,
                                                  metric_rows(args.method, kind.value, records)))
    write_manifest(out, "evaluate", config, {"policy": str(policy_dir), "episodes": episodes})
    for k, v in summarize(records).items():
        print(f"{k}: {v!r}")
    return 0


def read_points(path: Path) -> np.ndarray:
    pts = []
    for lineno, row in enumerate(csv.reader(io.StringIO(Path(path).read_text())), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise CliError(f"{path}:{lineno}: expected 'x,y', got {','.join(row)!r}")
        try:
            pts.append((float(row[0]), float(row[1])))
        except ValueError:
            if lineno == 1 and [c.strip().lower() for c in row] == ["x", "y"]:
                continue
            raise CliError(f"{path}:{lineno}: malformed row {','.join(row)!r}") from None
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def cmd_zone(args) -> int:
    pts = read_points(Path(args.points))
    radius = args.radius if args.radius is not None else cfgmod.preset(args.preset).zoning.radius
    cfg = MeanShiftConfig(radius=radius)
    out = out_root(args.out) / "zones"
    if len(pts):
        zones = assign_zones(pts, cfg)
        ok = coverage_ok(pts, zones)
    else:
        zones, ok = None, True
    centers = [] if zones is None else [(z, c[0], c[1], len(m)) for z, (c, m) in
                                        enumerate(zip(zones.centers, zones.membership))]
    members = [] if zones is None else sorted((i, z) for z, m in enumerate(zones.membership) for i in m)
    atomic_write(out / "centers.csv", rows_to_csv(("zone", "x", "y", "size"), centers))
    atomic_write(out / "membership.csv", rows_to_csv(("point", "zone"), members))
    atomic_write(out / "coverage.txt", f"coverage_ok = {ok}\nzones = {len(centers)}\npoints = {len(pts)}\n")
    if zones is not None and not args.no_plots:
        _zone_svg(pts, zones, out / "zones.svg")
    print(f"{len(centers)} zones for {len(pts)} points; coverage {'ok' if ok else 'FAILED'}")
    return 0 if ok else 1


def _zone_svg(pts, zones, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(pts[:, 0], pts[:, 1], ".", color="tab:gray")
    for c in zones.centers:
        ax.add_patch(plt.Circle(c, zones.radius, fill=False, color="tab:red"))
        ax.plot(*c, "+", color="tab:red")
    ax.set_aspect("equal")
    ax.autoscale_view()
    plt.rcParams["svg.hashsalt"] = "coalition-lab"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def load_models(args) -> TrainedModels:
    loaded = {}
    for flag, want in (("ugv_policy", Kind.UGV), ("uav_policy", Kind.UAV)):
        d = getattr(args, flag)
        if d is None:
            continue
        kind, policy = load_policy(Path(d))
        if kind is not want:
            raise CliError(f"{d} holds a {kind.value.upper()} policy, expected {want.value.upper()}")
        loaded[want] = policy
    return TrainedModels(loaded.get(Kind.UGV), loaded.get(Kind.UAV))


def _sweep_settings(config: cfgmod.ExperimentConfig, axis: str | None, value: str | None):
    m = config.mission
    radius = config.zoning.radius
    coalitions = parse_coalitions(m.coalition, m.n_coalitions)
    n_targets = m.n_targets
    if axis == "targets":
        n_targets = int(value)
    elif axis == "radius":
        radius = float(value)
    elif axis == "coalitions":
        g, a = (int(x) for x in value.split("-"))
        base, extra = divmod(a, g)
        coalitions = parse_coalitions("1x0", g)
        for i, c in enumerate(coalitions):
            c.n_uav = base + (1 if i < extra else 0)
    return n_targets, radius, coalitions


def run_evaluation_episodes(config: cfgmod.ExperimentConfig, models: TrainedModels, episodes: int,
                            axis: str | None = None, value: str | None = None, trace_dir: Path | None = None):
    """Evaluate ``episodes`` random missions; returns mission-level records."""
    m = config.mission
    mode = Mode(m.mode)
    n_targets, radius, _ = _sweep_settings(config, axis, value)
    mcfg = config.mission_config()
    records = []
    for e in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3, e]))
        n_obs = m.n_obstacles if m.n_obstacles >= 0 else int(rng.integers(1, 7))
        scenario = generate_scenario(rng, n_targets, m.n_clusters, n_obs, m.arena_size_m, radius)
        _, _, coalitions = _sweep_settings(config, axis, value)
        mission_plan = plan(scenario.targets, MeanShiftConfig(radius=radius), m.k_per_zone, mode, m.arena_size_m)
        outcome = run_mission(mission_plan, coalitions, models, scenario, config.seed + e, mcfg)
        records.append(outcome.to_record())
        if trace_dir is not None and e == 0:
            for z, zlog in enumerate(outcome.logs):
                render_zone_trace(zlog, trace_dir / f"trace_zone{z}.svg")
    return records


def cmd_mission(args) -> int:
    config = build_config(args)
    m = config.mission
    updates = {}
    if args.targets is not None:
        updates["n_targets"] = args.targets
    if args.coalition:
        updates["coalition"] = args.coalition
    if args.coalitions is not None:
        updates["n_coalitions"] = args.coalitions
    if args.mode:
        updates["mode"] = args.mode
    if args.k is not None:
        updates["k_per_zone"] = args.k
    if args.episodes is not None:
        updates["episodes"] = args.episodes
    config = replace(config, mission=replace(m, **updates))
    if args.radius is not None:
        config = replace(config, zoning=replace(config.zoning, radius=args.radius))
    models = load_models(args)
    out = out_root(args.out) / f"mission_{args.method}"
    out.mkdir(parents=True, exist_ok=True)
    values = SWEEPS[args.sweep] if args.sweep else [None]
    all_rows, episode_table = [], []
    header = None
    for value in values:
        label = f"{args.sweep}={value}" if args.sweep else config.mission.mode
        trace = out if (not args.no_plots and value == values[0]) else None
        try:
            records = run_evaluation_episodes(config, models, config.mission.episodes, args.sweep, value, trace)
        except LookupError as exc:
            raise CliError(str(exc)) from None
        all_rows += metric_rows(args.method, label, records)
        header, rows = episode_rows(records)
        episode_table += [(label, *r) for r in rows]
    atomic_write(out / "episodes.csv", rows_to_csv(("config", *header), episode_table))
    atomic_write(out / "metrics.csv", rows_to_csv(METRIC_TABLE_HEADER, all_rows))
    summary = "\n".join(f"{r[1]} {r[2]} = {r[3]!r}" for r in all_rows) + "\n"
    atomic_write(out / "summary.txt", summary)
    write_manifest(out, "mission", config, {"method": args.method, "sweep": args.sweep,
                                            "ugv_policy": args.ugv_policy, "uav_policy": args.uav_policy})
    print(summary, end="")
    return 0


def cmd_report(args) -> int:
    rows = []
    for run in args.runs:
        path = Path(run) / "metrics.csv" if Path(run).is_dir() else Path(run)
        if not path.exists():
            raise CliError(f"{run}: no metrics.csv")
        rows += read_metric_table(path)
    out = out_root(args.out) / "report"
    atomic_write(out / "comparison.csv",
                 rows_to_csv(METRIC_TABLE_HEADER, [[r[k] for k in METRIC_TABLE_HEADER] for r in rows]))
    if not args.no_plots:
        for metric in dict.fromkeys(r["metric"] for r in rows):
            render_metric_chart(rows, out / f"{metric}.svg", metric)
    print(f"{len(rows)} rows -> {out / 'comparison.csv'}")
    return 0


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coalition-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--preset", default="desk", choices=cfgmod.PRESETS)
        sp.add_argument("--config", help="key = value config file applied over the preset")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="single config override")
        sp.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
        if seed:
            sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train one phase (UGVs first, then UAVs)")
    common(t)
    t.add_argument("--phase", required=True, choices=[k.value for k in Kind])
    t.add_argument("--algo", choices=("maddpg", "mappo"))
    t.add_argument("--episodes", type=int)
    t.add_argument("--ugv-dir", help="trained UGV run directory (UAV phase); default <out>/ugv")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="roll out a trained policy in its training world")
    common(e)
    e.add_argument("--policy", required=True, help="policy directory written by train")
    e.add_argument("--episodes", type=int)
    e.add_argument("--ugv-dir")
    e.add_argument("--method", default="policy")
    e.set_defaults(func=cmd_evaluate)

    z = sub.add_parser("zone", help="partition a points file into zones")
    z.add_argument("points", help="CSV file with one x,y pair per line")
    z.add_argument("--radius", type=float)
    z.add_argument("--preset", default="desk", choices=cfgmod.PRESETS)
    z.add_argument("--out")
    z.add_argument("--no-plots", action="store_true")
    z.set_defaults(func=cmd_zone)

    m = sub.add_parser("mission", help="evaluate full missions with frozen policies")
    common(m)
    m.add_argument("--ugv-policy")
    m.add_argument("--uav-policy")
    m.add_argument("--episodes", type=int)
    m.add_argument("--targets", type=int)
    m.add_argument("--coalition", help="per-coalition vehicles as <ugvs>x<uavs>, e.g. 1x2")
    m.add_argument("--coalitions", type=int, help="number of coalitions")
    m.add_argument("--k", type=int, help="coalitions sent per zone")
    m.add_argument("--mode", choices=[x.value for x in Mode])
    m.add_argument("--radius", type=float, help="zone radius in metres")
    m.add_argument("--sweep", choices=sorted(SWEEPS))
    m.add_argument("--method", default="maddpg", help="label for the metrics table")
    m.add_argument("--no-plots", action="store_true")
    m.set_defaults(func=cmd_mission)

    r = sub.add_parser("report", help="merge metrics tables of several runs")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError, LookupError, neural.CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
