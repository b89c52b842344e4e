"""Episode records, the five evaluation metrics, and report rendering."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass
class EpisodeRecord:
    """Outcome of one evaluated episode.

    ``phi`` is the step count, ``alpha``/``beta`` the real agent-agent and
    agent-obstacle collision counts, ``completed`` the task flag. Paths and
    entity positions are optional and only needed by the constraint checker.
    """

    phi: int
    alpha: int
    beta: int
    completed: bool
    targets_total: int
    targets_reached: int
    ugv_paths: list[np.ndarray] = field(default_factory=list)
    uav_paths: list[np.ndarray] = field(default_factory=list)
    uav_airborne: list[np.ndarray] = field(default_factory=list)
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    ground_targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    aerial_targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        if self.targets_reached > self.targets_total:
            raise ValueError("targets_reached exceeds targets_total")
        if self.completed and self.targets_reached != self.targets_total:
            raise ValueError("a completed episode must reach every target")

    @property
    def accuracy(self) -> float:
        if self.targets_total == 0:
            return 100.0
        return 100.0 * self.targets_reached / self.targets_total


def _nonempty(records: Sequence[EpisodeRecord]) -> Sequence[EpisodeRecord]:
    if len(records) == 0:
        raise ValueError("metrics need at least one episode record")
    return records


def completion_rate(records: Sequence[EpisodeRecord]) -> float:
    records = _nonempty(records)
    return sum(1 for r in records if r.completed) / len(records)


def collisions_per_1k(records: Sequence[EpisodeRecord]) -> float:
    records = _nonempty(records)
    return 1000.0 * sum(r.alpha + r.beta for r in records) / len(records)


def mean_steps(records: Sequence[EpisodeRecord]) -> float:
    records = _nonempty(records)
    return sum(r.phi for r in records) / len(records)


def mean_steps_completed(records: Sequence[EpisodeRecord]) -> float:
    """Mean step count over completed episodes only (NaN if none completed)."""
    done = [r.phi for r in _nonempty(records) if r.completed]
    return sum(done) / len(done) if done else float("nan")


def accuracy(records: Sequence[EpisodeRecord]) -> float:
    """Pooled percentage of targets reached."""
    records = _nonempty(records)
    total = sum(r.targets_total for r in records)
    if total == 0:
        return 100.0
    return 100.0 * sum(r.targets_reached for r in records) / total


def completion_time(records: Sequence[EpisodeRecord]) -> float:
    return mean_steps(records)


def summarize(records: Sequence[EpisodeRecord]) -> dict[str, float]:
    return {
        "completion_rate": completion_rate(records),
        "collisions_per_1k": collisions_per_1k(records),
        "mean_steps": mean_steps(records),
        "mean_steps_completed": mean_steps_completed(records),
        "accuracy": accuracy(records),
        "completion_time": completion_time(records),
    }


# -- tables and charts -------------------------------------------------------

METRIC_TABLE_HEADER = ("method", "config", "metric", "value")


def metric_rows(method: str, config: str, records: Sequence[EpisodeRecord]) -> list[tuple]:
    return [(method, config, name, value) for name, value in summarize(records).items()]


def format_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def rows_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def episode_rows(records: Sequence[EpisodeRecord]) -> tuple[tuple, list[tuple]]:
    header = ("episode", "phi", "alpha", "beta", "completed", "targets_total", "targets_reached")
    rows = [(i, r.phi, r.alpha, r.beta, int(r.completed), r.targets_total, r.targets_reached)
            for i, r in enumerate(records)]
    return header, rows


def read_metric_table(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_metric_chart(rows: Sequence[dict], path, metric: str) -> None:
    """Bar/line chart of one metric across (method, config) rows, as SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    selected = [r for r in rows if r["metric"] == metric]
    methods = sorted({r["method"] for r in selected})
    configs = list(dict.fromkeys(r["config"] for r in selected))
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in methods:
        ys = []
        for cfg in configs:
            match = [float(r["value"]) for r in selected if r["method"] == method and r["config"] == cfg]
            ys.append(match[0] if match else np.nan)
        ax.plot(configs, ys, marker="o", label=method)
    ax.set_xlabel("configuration")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    plt.rcParams["svg.hashsalt"] = "coalition-lab"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
