"""Timestamped benchmark events, per-worker buffers and the event log formats.

Line format (one record per line, after ``#`` preamble lines)::

    phase,node,process,iteration,event,timestamp_ns,size_bytes

Execution events carry iteration ``-1``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

from .errors import LogParseError, MissingWorker, TelemetryError

FORMAT_TAG = "fieldbench-eventlog v1"
HEADER = "phase,node,process,iteration,event,timestamp_ns,size_bytes"


class Phase(str, Enum):
    SETUP = "setup"
    WRITE = "write"
    READ = "read"


class Event(str, Enum):
    EXEC_START = "ExecStart"
    IO_START = "IoStart"
    OPEN_START = "OpenStart"
    OPEN_END = "OpenEnd"
    TRANSFER_START = "TransferStart"
    TRANSFER_END = "TransferEnd"
    CLOSE_START = "CloseStart"
    CLOSE_END = "CloseEnd"
    IO_END = "IoEnd"
    EXEC_END = "ExecEnd"


EVENT_ORDER = {e: i for i, e in enumerate(Event)}
IO_EVENTS = tuple(e for e in Event if e not in (Event.EXEC_START, Event.EXEC_END))
_PHASES = {p.value: p for p in Phase}
_EVENTS = {e.value: e for e in Event}


class WorkerIdentity(NamedTuple):
    client_node: int
    process: int
    iteration: int


class EventRecord(NamedTuple):
    phase: Phase
    node: int
    process: int
    iteration: int
    event: Event
    timestamp: int
    size: int = 0

    @property
    def identity(self) -> WorkerIdentity:
        return WorkerIdentity(self.node, self.process, self.iteration)

    def to_line(self) -> str:
        return (f"{self.phase.value},{self.node},{self.process},{self.iteration},"
                f"{self.event.value},{self.timestamp},{self.size}")


class EventBuffer:
    """Append-only record store owned by one worker.

    Records are kept as plain tuples in a list; appends are amortised O(1).
    """

    __slots__ = ("node", "process", "clock", "skew_ns", "records")

    def __init__(self, node: int, process: int, clock: Callable[[], int], skew_ns: int = 0):
        self.node = node
        self.process = process
        self.clock = clock
        self.skew_ns = skew_ns
        self.records: list[EventRecord] = []

    def record(self, phase: Phase, iteration: int, event: Event, size: int = 0, timestamp: int | None = None):
        if timestamp is None:
            timestamp = self.clock() + self.skew_ns
        self.records.append(EventRecord(phase, self.node, self.process, iteration, event, timestamp, size))

    @property
    def finished(self) -> bool:
        return any(r.event is Event.EXEC_END for r in self.records)


def record_event(buffer: EventBuffer, identity: WorkerIdentity, phase: Phase, event: Event, size: int = 0):
    if (identity.client_node, identity.process) != (buffer.node, buffer.process):
        raise TelemetryError(f"buffer of ({buffer.node}, {buffer.process}) cannot record for {identity}")
    buffer.record(phase, identity.iteration, event, size)


@dataclass
class EventLog:
    records: list[EventRecord]
    config: dict = field(default_factory=dict)
    epoch_ns: int = 0
    failure: str | None = None

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, EventLog):
            return NotImplemented
        return (self.records == other.records and self.config == other.config
                and self.epoch_ns == other.epoch_ns and self.failure == other.failure)

    def phase_records(self, phase: Phase) -> list[EventRecord]:
        return [r for r in self.records if r.phase is phase]

    @property
    def phases(self) -> list[Phase]:
        seen = {r.phase for r in self.records}
        return [p for p in Phase if p in seen]

    # line format

    def dumps(self) -> str:
        out = io.StringIO()
        out.write(f"# {FORMAT_TAG}\n")
        out.write(f"# epoch_ns={self.epoch_ns}\n")
        out.write(f"# config={json.dumps(self.config, sort_keys=True, separators=(',', ':'))}\n")
        out.write(HEADER + "\n")
        for r in self.records:
            out.write(r.to_line())
            out.write("\n")
        if self.failure is not None:
            out.write(f"# failed={json.dumps(self.failure)}\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str, path: str = "<string>") -> "EventLog":
        config, epoch, failure = {}, 0, None
        records = []
        seen_header = False
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.startswith("#"):
                body = line[1:].strip()
                try:
                    if body.startswith("epoch_ns="):
                        epoch = int(body[len("epoch_ns="):])
                    elif body.startswith("config="):
                        config = json.loads(body[len("config="):])
                    elif body.startswith("failed="):
                        failure = json.loads(body[len("failed="):])
                except ValueError as exc:
                    raise LogParseError(path, lineno, f"bad preamble: {exc}") from None
                continue
            if not seen_header:
                if line != HEADER:
                    raise LogParseError(path, lineno, f"expected header {HEADER!r}")
                seen_header = True
                continue
            records.append(_parse_record(line, path, lineno))
        if not seen_header:
            raise LogParseError(path, 0, "missing header line")
        return cls(records, config, epoch, failure)

    def save(self, path: str | Path):
        path = Path(path)
        if path.suffix == ".json":
            path.write_text(self.to_json())
        else:
            path.write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "EventLog":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".json":
            return cls.from_json(text, str(path))
        return cls.loads(text, str(path))

    # structured document

    def to_json(self) -> str:
        doc = {
            "format": FORMAT_TAG,
            "epoch_ns": self.epoch_ns,
            "config": self.config,
            "failure": self.failure,
            "columns": HEADER.split(","),
            "records": [[r.phase.value, r.node, r.process, r.iteration, r.event.value, r.timestamp, r.size]
                        for r in self.records],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, path: str = "<string>") -> "EventLog":
        try:
            doc = json.loads(text)
            records = [EventRecord(_PHASES[p], int(n), int(pr), int(i), _EVENTS[e], int(t), int(s))
                       for p, n, pr, i, e, t, s in doc["records"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise LogParseError(path, 0, f"bad document: {exc!r}") from None
        return cls(records, doc.get("config", {}), doc.get("epoch_ns", 0), doc.get("failure"))


def _parse_record(line: str, path: str, lineno: int) -> EventRecord:
    parts = line.split(",")
    if len(parts) != 7:
        raise LogParseError(path, lineno, f"expected 7 fields, got {len(parts)}")
    phase, node, process, iteration, event, ts, size = parts
    try:
        return EventRecord(_PHASES[phase], int(node), int(process), int(iteration), _EVENTS[event],
                           int(ts), int(size))
    except KeyError as exc:
        raise LogParseError(path, lineno, f"unknown name {exc}") from None
    except ValueError as exc:
        raise LogParseError(path, lineno, str(exc)) from None


def _merge_key(item):
    seq, r = item
    return (r.timestamp, r.node, r.process, seq)


def merge_logs(buffers: Iterable[EventBuffer], config: dict | None = None, epoch_ns: int = 0,
               allow_incomplete: bool = False) -> EventLog:
    """Merge worker buffers into one log ordered by (timestamp, identity).

    Records of one worker keep their program order on equal timestamps.
    """
    buffers = list(buffers)
    if not buffers:
        raise TelemetryError("no event buffers to merge")
    items = []
    for buf in buffers:
        if not allow_incomplete and not buf.finished:
            raise MissingWorker(f"worker node={buf.node} process={buf.process} produced no ExecEnd")
        items.extend(enumerate(buf.records))
        buf.records = []
    items.sort(key=_merge_key)
    return EventLog([r for _, r in items], dict(config or {}), epoch_ns)
