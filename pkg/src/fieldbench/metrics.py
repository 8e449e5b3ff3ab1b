"""Throughput and offset metrics over an event log.

I/O boundaries are the ``IoStart``/``IoEnd`` events; an I/O's size is the sum
of its ``TransferEnd`` sizes. Durations are seconds, bandwidths bytes/second.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    EmptyPhase,
    IncompleteLog,
    MissingIteration,
    NotPatternB,
    UnsynchronizedDriver,
    ZeroDuration,
)
from .telemetry import Event, EventLog, Phase

NS = 1e9
MAIN_PHASES = (Phase.WRITE, Phase.READ)


@dataclass(frozen=True)
class IoTable:
    """One row per I/O of a phase, as parallel arrays."""

    worker: np.ndarray  # dense worker index
    iteration: np.ndarray
    start: np.ndarray  # ns
    end: np.ndarray  # ns
    size: np.ndarray  # bytes

    def __len__(self):
        return len(self.start)


_IO_EVENTS = {Event.IO_START: 0, Event.TRANSFER_END: 1, Event.IO_END: 2}
_EVENT_CODE = {e: _IO_EVENTS.get(e, -1) for e in Event}
_PHASE_CODE = {p: i for i, p in enumerate(Phase)}


def io_tables(log: EventLog) -> dict[Phase, IoTable]:
    """Tables for every phase present, from one columnar pass over the log."""
    if not log.records:
        return {}
    phase, node, proc, it, ev, ts, size = zip(*log.records)
    n = len(phase)
    ph = np.fromiter(map(_PHASE_CODE.__getitem__, phase), dtype=np.int64, count=n)
    ev = np.fromiter(map(_EVENT_CODE.__getitem__, ev), dtype=np.int64, count=n)
    cols = np.array([node, proc, it, ts, size], dtype=np.int64)
    return {p: _build(p, cols[:, (ph == code) & (ev >= 0)], ev[(ph == code) & (ev >= 0)])
            for p, code in _PHASE_CODE.items() if (ph == code).any()}


def io_table(log: EventLog, phase: Phase | str) -> IoTable:
    phase = Phase(phase)
    tables = io_tables(log)
    return tables[phase] if phase in tables else _build(phase, np.zeros((5, 0), np.int64), np.zeros(0, np.int64))


def _build(phase: Phase, cols: np.ndarray, ev: np.ndarray) -> IoTable:
    node, proc, it, ts, size = cols
    if not len(ev):
        empty = np.zeros(0, dtype=np.int64)
        return IoTable(empty, empty, empty, empty, empty)
    order = np.lexsort((it, proc, node))
    node, proc, it, ts, size, ev = node[order], proc[order], it[order], ts[order], size[order], ev[order]
    new_io = np.ones(len(ev), dtype=bool)
    new_io[1:] = (node[1:] != node[:-1]) | (proc[1:] != proc[:-1]) | (it[1:] != it[:-1])
    inverse = np.cumsum(new_io) - 1
    keys = np.stack([node[new_io], proc[new_io], it[new_io]], axis=1)
    n = len(keys)
    seen = np.zeros((3, n), dtype=np.int64)
    np.add.at(seen, (ev, inverse), 1)
    if (seen[0] == 0).any() or (seen[2] == 0).any():
        raise IncompleteLog(f"{phase.value} phase has I/Os without both IoStart and IoEnd")
    start = np.zeros(n, dtype=np.int64)
    end = np.zeros(n, dtype=np.int64)
    start[inverse[ev == 0]] = ts[ev == 0]
    end[inverse[ev == 2]] = ts[ev == 2]
    moved = np.zeros(n, dtype=np.int64)
    np.add.at(moved, inverse[ev == 1], size[ev == 1])
    new_worker = np.ones(n, dtype=bool)
    new_worker[1:] = (keys[1:, 0] != keys[:-1, 0]) | (keys[1:, 1] != keys[:-1, 1])
    worker = np.cumsum(new_worker) - 1
    return IoTable(worker=worker.astype(np.int64), iteration=keys[:, 2].copy(),
                   start=start, end=end, size=moved)


def _table(source, phase) -> IoTable:
    table = source if isinstance(source, IoTable) else io_table(source, phase)
    if not len(table):
        raise EmptyPhase(f"phase {Phase(phase).value} has no I/O")
    return table


def is_synchronized(log: EventLog) -> bool:
    return log.config.get("driver") == "ior"


def _require_sync(log):
    if isinstance(log, EventLog) and not is_synchronized(log):
        raise UnsynchronizedDriver("per-iteration metrics are only valid when I/O is synchronised across processes")


def _span(table: IoTable) -> int:
    return int(table.end.max()) - int(table.start.min())


def total_parallel_wallclock(log, phase: Phase | str) -> float:
    """Last I/O end minus first I/O start of the phase."""
    return _span(_table(log, phase)) / NS


def global_timing_bandwidth(log, phase: Phase | str) -> float:
    table = _table(log, phase)
    span = _span(table)
    if span <= 0:
        raise ZeroDuration(f"phase {Phase(phase).value} spans no time")
    return int(table.size.sum()) / (span / NS)


def _iteration_spans(table: IoTable):
    iters, inverse = np.unique(table.iteration, return_inverse=True)
    lo = np.full(len(iters), np.iinfo(np.int64).max, dtype=np.int64)
    hi = np.full(len(iters), np.iinfo(np.int64).min, dtype=np.int64)
    np.minimum.at(lo, inverse, table.start)
    np.maximum.at(hi, inverse, table.end)
    sizes = np.bincount(inverse, weights=table.size.astype(np.float64), minlength=len(iters))
    return iters, hi - lo, sizes


def single_iteration_wallclock(log, phase: Phase | str, iteration: int) -> float:
    _require_sync(log)
    table = _table(log, phase)
    mask = table.iteration == iteration
    if not mask.any():
        raise MissingIteration(f"iteration {iteration} absent from {Phase(phase).value} phase")
    return (int(table.end[mask].max()) - int(table.start[mask].min())) / NS


def iteration_wallclocks(log, phase: Phase | str) -> list[float]:
    _require_sync(log)
    _, spans, _ = _iteration_spans(_table(log, phase))
    return [int(s) / NS for s in spans]


def synchronous_bandwidth(log, phase: Phase | str | None = None):
    """Mean over iterations of (bytes moved in the iteration / iteration span).

    With no phase, returns a mapping for every main phase present.
    """
    _require_sync(log)
    if phase is None:
        return {p: synchronous_bandwidth(log, p) for p in _present(log)}
    _, spans, sizes = _iteration_spans(_table(log, phase))
    if (spans <= 0).any():
        raise ZeroDuration(f"an iteration of phase {Phase(phase).value} spans no time")
    return float(np.mean(sizes / (spans / NS)))


def _first_last(table: IoTable):
    """Per worker: start of its first iteration and end of its last."""
    order = np.lexsort((table.iteration, table.worker))
    w = table.worker[order]
    first = np.ones(len(w), dtype=bool)
    first[1:] = w[1:] != w[:-1]
    last = np.ones(len(w), dtype=bool)
    last[:-1] = w[1:] != w[:-1]
    return table.start[order][first], table.end[order][last]


def io_offsets(log, phase: Phase | str) -> dict:
    """Start and end straggler offsets, in seconds and as span fractions."""
    table = _table(log, phase)
    first_starts, last_ends = _first_last(table)
    t0, tf = int(table.start.min()), int(table.end.max())
    off0 = (int(first_starts.max()) - t0) / NS
    offf = (tf - int(last_ends.min())) / NS
    span = (tf - t0) / NS
    return {
        "off0": off0,
        "offf": offf,
        "off0_fraction": off0 / span if span > 0 else 0.0,
        "offf_fraction": offf / span if span > 0 else 0.0,
    }


def phase_offsets(log: EventLog, tables: dict[Phase, IoTable] | None = None) -> dict:
    """Skew between the concurrent write and read phases of pattern B.

    Fractions are relative to the combined span of both phases.
    """
    if log.config.get("pattern", "b") != "b":
        raise NotPatternB("phase offsets need a pattern B log")
    tables = io_tables(log) if tables is None else tables
    if Phase.WRITE not in tables or Phase.READ not in tables:
        raise NotPatternB("phase offsets need both write and read phases")
    w, r = tables[Phase.WRITE], tables[Phase.READ]
    if not len(w) or not len(r):
        raise NotPatternB("phase offsets need both write and read phases")
    po0 = abs(int(w.start.min()) - int(r.start.min())) / NS
    pof = abs(int(w.end.max()) - int(r.end.max())) / NS
    span = (max(int(w.end.max()), int(r.end.max())) - min(int(w.start.min()), int(r.start.min()))) / NS
    return {
        "po0": po0,
        "pof": pof,
        "po0_fraction": po0 / span if span > 0 else 0.0,
        "pof_fraction": pof / span if span > 0 else 0.0,
    }


def _present(log: EventLog) -> list[Phase]:
    phases = log.phases
    return [p for p in MAIN_PHASES if p in phases]


@dataclass
class PhaseMetrics:
    io_count: int
    bytes: int
    total_parallel_wallclock: float
    global_timing_bandwidth: float
    off0: float
    offf: float
    off0_fraction: float
    offf_fraction: float
    synchronous_bandwidth: float | None = None
    iteration_wallclock: list[float] | None = None


_UNITS = {
    "io_count": "count",
    "bytes": "B",
    "total_parallel_wallclock": "s",
    "global_timing_bandwidth": "B/s",
    "synchronous_bandwidth": "B/s",
    "aggregated_bandwidth": "B/s",
    "off0": "s",
    "offf": "s",
    "po0": "s",
    "pof": "s",
}


@dataclass
class MetricsReport:
    config: dict
    phases: dict[str, PhaseMetrics]
    phase_offsets: dict | None = None
    aggregated_bandwidth: float | None = None
    source: str | None = None

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "config": self.config,
            "phases": {name: asdict(m) for name, m in self.phases.items()},
            "phase_offsets": self.phase_offsets,
            "aggregated_bandwidth": self.aggregated_bandwidth,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def rows(self) -> list[tuple[str, str, float, str]]:
        """Flat (name, phase, value, unit) rows."""
        out = []
        for name, m in self.phases.items():
            for metric, value in asdict(m).items():
                if value is None or metric == "iteration_wallclock":
                    continue
                out.append((metric, name, value, _UNITS.get(metric, "fraction")))
            for i, value in enumerate(m.iteration_wallclock or ()):
                out.append((f"iteration_wallclock[{i}]", name, value, "s"))
        if self.phase_offsets is not None:
            for metric, value in self.phase_offsets.items():
                out.append((metric, "write+read", value, _UNITS.get(metric, "fraction")))
        if self.aggregated_bandwidth is not None:
            out.append(("aggregated_bandwidth", "write+read", self.aggregated_bandwidth, "B/s"))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("name", "phase", "value", "unit"))
        writer.writerows((n, p, repr(float(v)), u) for n, p, v, u in self.rows())
        return buf.getvalue()


def build_report(log: EventLog, source: str | None = None) -> MetricsReport:
    if log.failure is not None:
        raise IncompleteLog(f"run failed: {log.failure}")
    sync = is_synchronized(log)
    tables = io_tables(log)
    phases = {}
    for phase in MAIN_PHASES:
        if phase not in tables:
            continue
        table = tables[phase]
        offs = io_offsets(table, phase)
        m = PhaseMetrics(
            io_count=len(table),
            bytes=int(table.size.sum()),
            total_parallel_wallclock=total_parallel_wallclock(table, phase),
            global_timing_bandwidth=global_timing_bandwidth(table, phase),
            **offs,
        )
        if sync:
            m.synchronous_bandwidth = synchronous_bandwidth(table, phase)
            m.iteration_wallclock = iteration_wallclocks(table, phase)
        phases[phase.value] = m
    if not phases:
        raise EmptyPhase("log holds no write or read I/O")
    report = MetricsReport(dict(log.config), phases, source=source)
    if log.config.get("pattern") == "b" and len(phases) == 2:
        report.phase_offsets = phase_offsets(log, tables)
        report.aggregated_bandwidth = sum(m.global_timing_bandwidth for m in phases.values())
    return report


GROUP_FIELDS = ("pattern", "driver", "mode", "backend", "servers", "clients", "procs_per_client", "ios",
                "object_size", "contention")
AGGREGATED = ("global_timing_bandwidth", "synchronous_bandwidth", "aggregated_bandwidth",
              "total_parallel_wallclock", "off0_fraction", "offf_fraction", "po0_fraction", "pof_fraction")


@dataclass
class AggregateRow:
    group: dict
    metric: str
    phase: str
    count: int
    mean: float
    max: float
    values: list = field(default_factory=list, repr=False)


def group_key(config: dict) -> tuple:
    """Config identity for aggregation: everything except seed and repetition."""
    return tuple(sorted((k, json.dumps(v)) for k, v in config.items() if k not in ("seed", "repetition")))


def aggregate(reports: list[MetricsReport]) -> list[AggregateRow]:
    """Mean and max of each headline metric across repetitions of one config."""
    groups: dict[tuple, dict] = {}
    for rep in reports:
        bucket = groups.setdefault(group_key(rep.config), {"config": rep.config, "values": {}})
        for name, phase, value, _ in rep.rows():
            if name in AGGREGATED:
                bucket["values"].setdefault((name, phase), []).append(float(value))
    rows = []
    for bucket in groups.values():
        label = {k: bucket["config"].get(k) for k in GROUP_FIELDS}
        for (name, phase), values in bucket["values"].items():
            rows.append(AggregateRow(label, name, phase, len(values), float(np.mean(values)), max(values), values))
    return rows


def aggregate_csv(rows: list[AggregateRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow((*GROUP_FIELDS, "metric", "phase", "count", "mean", "max"))
    for row in rows:
        writer.writerow((*(row.group[k] for k in GROUP_FIELDS), row.metric, row.phase, row.count,
                         repr(row.mean), repr(row.max)))
    return buf.getvalue()
