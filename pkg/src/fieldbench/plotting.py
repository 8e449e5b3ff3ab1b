"""Figures for analysed runs. Always renders off-screen to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import AggregateRow  # noqa: E402
from .telemetry import Event, EventLog, Phase  # noqa: E402

GIB = float(1 << 30)
_COLORS = {"write": "tab:red", "read": "tab:blue", "setup": "tab:gray", "write+read": "tab:purple"}


def plot_bandwidth_scaling(rows: list[AggregateRow], path: str | Path, metric: str = "global_timing_bandwidth"):
    """Mean (line) and max (marker) bandwidth against server count, one series per config family."""
    series: dict[tuple, list] = {}
    for row in rows:
        if row.metric != metric and not (metric == "global_timing_bandwidth" and row.metric == "aggregated_bandwidth"):
            continue
        g = row.group
        label = (g["driver"], g["mode"] if g["driver"] == "fieldio" else "segments", g["pattern"], row.phase)
        series.setdefault(label, []).append((g["servers"], row.mean, row.max))
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, points in sorted(series.items()):
        points.sort()
        xs = [p[0] for p in points]
        color = _COLORS.get(label[3])
        ax.plot(xs, [p[1] / GIB for p in points], "-o", ms=3, color=color, label="/".join(map(str, label)))
        ax.plot(xs, [p[2] / GIB for p in points], "^", ms=4, mfc="none", color=color)
    ax.set_xlabel("server nodes")
    ax.set_ylabel(f"{metric.replace('_', ' ')} (GiB/s)")
    ax.set_xlim(left=0)
    ax.set_ylim(bottom=0)
    ax.grid(alpha=0.3)
    if series:
        ax.legend(fontsize=7, frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_timeline(log: EventLog, path: str | Path, max_workers: int = 64):
    """One row per worker, one bar per I/O from IoStart to IoEnd."""
    starts = {}
    bars: dict[tuple, list] = {}
    t0 = min((r.timestamp for r in log.records), default=0)
    for r in log.records:
        key = (r.phase, r.node, r.process, r.iteration)
        if r.event is Event.IO_START:
            starts[key] = r.timestamp
        elif r.event is Event.IO_END and key in starts:
            start = starts.pop(key)
            bars.setdefault((r.phase, r.node, r.process), []).append(((start - t0) / 1e9, (r.timestamp - t0) / 1e9))
    lanes = sorted({(node, proc) for _, node, proc in bars})[:max_workers]
    row_of = {lane: i for i, lane in enumerate(lanes)}
    fig, ax = plt.subplots(figsize=(7, max(2.0, 0.18 * len(lanes) + 1)))
    for (phase, node, proc), spans in sorted(bars.items()):
        if (node, proc) not in row_of:
            continue
        ax.broken_barh([(a, b - a) for a, b in spans], (row_of[(node, proc)] - 0.4, 0.8),
                       facecolors=_COLORS[phase.value], alpha=0.7, linewidth=0)
    ax.set_yticks(range(len(lanes)))
    ax.set_yticklabels([f"{n}.{p}" for n, p in lanes], fontsize=6)
    ax.set_xlabel("time since first event (s)")
    ax.set_ylabel("node.process")
    handles = [plt.Rectangle((0, 0), 1, 1, color=_COLORS[p.value]) for p in Phase if p in log.phases]
    ax.legend(handles, [p.value for p in Phase if p in log.phases], fontsize=7, frameon=False, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
