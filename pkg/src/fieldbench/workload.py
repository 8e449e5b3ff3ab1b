"""Parallel benchmark drivers: Field I/O patterns A and B, and IOR segments.

Client nodes and processes are labels on in-process workers. Barriers are
runtime rendezvous; under the simulated backend all timestamps are virtual.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backend import FileBackend, MemoryBackend, SimBackend
from .backend.model import ContainerId, ObjectId, PoolHandle
from .config import BackendKind, BenchmarkConfig, Contention, Driver, Pattern
from .errors import AlreadyExists, WorkloadError
from .fieldstore import Census, FieldKey, FieldStore, FieldStoreMode, census
from .runtime import Runtime, ThreadRuntime, VirtualRuntime, WorkerContext
from .telemetry import Event, EventBuffer, EventLog, Phase, WorkerIdentity, merge_logs

IOR_CONTAINER_ID = ContainerId.from_bytes(b"fieldbench:ior")

_TAG = struct.Struct(">4sIIIIQ")
_MAGIC = b"FBPL"
TAG_SIZE = _TAG.size


class IntegrityError(WorkloadError):
    pass


def make_payload(seed: int, node: int, process: int, seq: int, size: int) -> bytes:
    """Pseudo-random bytes led by a tag naming the writer and write sequence."""
    tag = _TAG.pack(_MAGIC, seed & 0xFFFFFFFF, node, process, seq, size)
    body = np.random.Generator(np.random.SFC64([seed, node, process, seq])).bytes(max(size - TAG_SIZE, 0))
    return (tag + body)[:size]


def read_tag(data: bytes) -> tuple[int, int, int, int, int]:
    """(seed, node, process, seq, size) from a payload; raises if untagged."""
    if len(data) < TAG_SIZE:
        raise IntegrityError(f"payload of {len(data)} bytes is too short to carry a tag")
    magic, seed, node, process, seq, size = _TAG.unpack_from(data)
    if magic != _MAGIC:
        raise IntegrityError("payload tag missing")
    return seed, node, process, seq, size


def check_payload(data: bytes, seed: int) -> tuple[int, int, int]:
    """Verify a tagged payload is intact; return (node, process, seq)."""
    tag_seed, node, process, seq, size = read_tag(data)
    if tag_seed != seed & 0xFFFFFFFF or size != len(data):
        raise IntegrityError(f"payload tag inconsistent (seed {tag_seed}, size {size}, got {len(data)} bytes)")
    if make_payload(seed, node, process, seq, size) != data:
        raise IntegrityError(f"payload of node={node} process={process} seq={seq} is corrupt or mixed")
    return node, process, seq


def generate_field_key(identity: WorkerIdentity, contention: Contention | str) -> FieldKey:
    """Deterministic, collision-free key for one worker I/O.

    Shared contention puts every worker in one forecast; per-process
    contention gives each worker its own forecast.
    """
    contention = Contention(contention)
    node, process, iteration = identity
    ms = {"class": "od", "date": "20201224", "expver": "0001"}
    if contention is Contention.PERPROC:
        ms["number"] = f"{node}.{process}"
    ls = {"param": "130", "node": str(node), "proc": str(process), "step": str(iteration)}
    return FieldKey(ms, ls)


@dataclass
class Environment:
    runtime: Runtime
    backend: MemoryBackend
    pool: PoolHandle
    stats: dict = field(default_factory=lambda: {"verified_reads": 0, "writes": 0, "observed_seqs": []})


def make_environment(config: BenchmarkConfig, directory=None) -> Environment:
    topology = config.topology()
    if config.backend is BackendKind.SIM:
        runtime = VirtualRuntime()
        backend = SimBackend(topology, runtime)
    elif config.backend is BackendKind.FILE:
        runtime = ThreadRuntime()
        backend = FileBackend(directory, topology)
    else:
        runtime = ThreadRuntime()
        backend = MemoryBackend(topology)
    return Environment(runtime, backend, backend.create_pool(topology))


def object_prefix(config: BenchmarkConfig, seed: int, rank: int) -> int:
    """Non-zero 32-bit object id prefix, distinct across the ranks of one run.

    Consecutive seeds shift the whole block, so repetitions sample different
    target placements on the simulated backend.
    """
    return (seed * config.total_procs + rank) % 0xFFFF0000 + 1


def worker_contexts(config: BenchmarkConfig) -> list[WorkerContext]:
    ppn = config.procs_per_client
    return [WorkerContext(node * ppn + p, node, p) for node in range(config.clients) for p in range(ppn)]


def expected_record_count(config: BenchmarkConfig) -> int:
    workers = config.total_procs
    per_io = 8
    if config.driver is Driver.IOR:
        return 2 * workers * (2 + per_io)
    if config.pattern is Pattern.A:
        return 2 * workers * (2 + per_io * config.ios)
    half = workers // 2
    return half * (2 + per_io) + 2 * half * (2 + per_io * config.ios)


class _Worker:
    """Per-worker state: identity, event buffer and the field store it owns."""

    def __init__(self, env: Environment, config: BenchmarkConfig, ctx: WorkerContext, seed: int):
        self.env, self.config, self.ctx, self.seed = env, config, ctx, seed
        self.buffer = EventBuffer(ctx.node, ctx.process, env.runtime.now_ns, ctx.rank * config.clock_skew_ns)
        self.phase = Phase.WRITE
        self.iteration = -1
        self.store: FieldStore | None = None
        self.verified = 0
        self.writes = 0
        self.seqs: list[int] = []

    def trace(self, event: Event, size: int = 0):
        self.buffer.record(self.phase, self.iteration, event, size)

    def open_store(self):
        c = self.config
        self.store = FieldStore.open(self.env.backend, self.env.pool, c.mode, c.kv_class, c.array_class,
                                     oid_prefix=object_prefix(c, self.seed, self.ctx.rank), tracer=self.trace)

    def begin(self, phase: Phase):
        self.phase, self.iteration = phase, -1
        self.buffer.record(phase, -1, Event.EXEC_START)

    def end(self):
        self.iteration = -1
        self.buffer.record(self.phase, -1, Event.EXEC_END)

    def io(self, iteration: int, op: Callable[[], None]):
        self.iteration = iteration
        self.buffer.record(self.phase, iteration, Event.IO_START)
        try:
            op()
        except WorkloadError:
            raise
        except Exception as exc:
            raise WorkloadError(
                f"I/O failed at node={self.ctx.node} process={self.ctx.process} iteration={iteration} "
                f"({self.phase.value}): {exc!r}",
                identity=WorkerIdentity(self.ctx.node, self.ctx.process, iteration)) from exc
        self.buffer.record(self.phase, iteration, Event.IO_END)


def _execute(env: Environment, config: BenchmarkConfig, workers: list[_Worker], bodies, repetition: int,
             epoch: int) -> EventLog:
    echo = {**config.to_dict(), "repetition": repetition}
    try:
        env.runtime.run([(w.ctx, body) for w, body in zip(workers, bodies)])
    except WorkloadError as exc:
        log = merge_logs([w.buffer for w in workers], echo, epoch, allow_incomplete=True)
        log.failure = str(exc)
        exc.log = log
        raise
    for w in workers:
        env.stats["verified_reads"] += w.verified
        env.stats["writes"] += w.writes
        env.stats["observed_seqs"].extend(w.seqs)
    return merge_logs([w.buffer for w in workers], echo, epoch)


def _combine(logs: list[EventLog]) -> EventLog:
    records = sorted((r for log in logs for r in log.records),
                     key=lambda r: (r.timestamp, r.node, r.process))
    # Stable sort on already-ordered inputs keeps program order within a worker.
    return EventLog(records, logs[0].config, logs[0].epoch_ns)


def run_pattern_a(config: BenchmarkConfig, env: Environment | None = None, repetition: int = 0) -> EventLog:
    """Unique writes, barrier, then a fresh process set reads every field back."""
    if config.driver is Driver.IOR:
        return run_ior_segments(config, env, repetition)
    env = env or make_environment(config)
    seed = config.seed + repetition
    epoch = env.runtime.now_ns()
    ctxs = worker_contexts(config)

    def phase_bodies(phase: Phase, workers: list[_Worker]):
        def make(w: _Worker):
            def body():
                w.begin(phase)
                w.open_store()
                if config.start_barrier:
                    env.runtime.barrier()
                for i in range(config.ios):
                    key = generate_field_key(WorkerIdentity(w.ctx.node, w.ctx.process, i), config.contention)
                    if phase is Phase.WRITE:
                        data = make_payload(seed, w.ctx.node, w.ctx.process, i, config.object_size)
                        w.io(i, lambda: w.store.write(key, data))
                        w.writes += 1
                    else:
                        w.io(i, lambda: _verify_read(w, key, i))
                w.end()
            return body
        return [make(w) for w in workers]

    writers = [_Worker(env, config, ctx, seed) for ctx in ctxs]
    write_log = _execute(env, config, writers, phase_bodies(Phase.WRITE, writers), repetition, epoch)
    # A new process set with cold handle caches performs the reads.
    readers = [_Worker(env, config, ctx, seed) for ctx in ctxs]
    read_log = _execute(env, config, readers, phase_bodies(Phase.READ, readers), repetition, epoch)
    return _combine([write_log, read_log])


def _verify_read(w: _Worker, key: FieldKey, i: int):
    data = w.store.read(key)
    if w.config.verify:
        expected = make_payload(w.seed, w.ctx.node, w.ctx.process, i, w.config.object_size)
        if data != expected:
            raise IntegrityError(f"read of {key} returned wrong payload")
        w.verified += 1


def run_pattern_b(config: BenchmarkConfig, env: Environment | None = None, repetition: int = 0) -> EventLog:
    """Half the workers re-write their field while the other half read it.

    Reader ``r`` reads the field written by writer ``r - half``.
    """
    if config.pattern is not Pattern.B:
        config = config.replace(pattern="b")
    env = env or make_environment(config)
    seed = config.seed + repetition
    epoch = env.runtime.now_ns()
    ctxs = worker_contexts(config)
    half = len(ctxs) // 2
    workers = [_Worker(env, config, ctx, seed) for ctx in ctxs]

    def designated_key(writer: WorkerContext) -> FieldKey:
        return generate_field_key(WorkerIdentity(writer.node, writer.process, 0), config.contention)

    def writer_body(w: _Worker):
        key = designated_key(w.ctx)

        def body():
            w.begin(Phase.SETUP)
            w.open_store()
            if config.start_barrier:
                env.runtime.barrier()
            data = make_payload(seed, w.ctx.node, w.ctx.process, 0, config.object_size)
            w.io(0, lambda: w.store.write(key, data))
            w.writes += 1
            w.end()
            env.runtime.barrier()
            w.begin(Phase.WRITE)
            for i in range(config.ios):
                data = make_payload(seed, w.ctx.node, w.ctx.process, i + 1, config.object_size)
                w.io(i, lambda: w.store.write(key, data))
                w.writes += 1
            w.end()
        return body

    def reader_body(w: _Worker, writer: WorkerContext):
        key = designated_key(writer)

        def check(i):
            data = w.store.read(key)
            if config.verify:
                node, process, seq = check_payload(data, seed)
                if (node, process) != (writer.node, writer.process) or not 0 <= seq <= config.ios:
                    raise IntegrityError(f"reader got payload of node={node} process={process} seq={seq}")
                w.seqs.append(seq)
                w.verified += 1

        def body():
            w.open_store()
            if config.start_barrier:
                env.runtime.barrier()
            env.runtime.barrier()
            w.begin(Phase.READ)
            for i in range(config.ios):
                w.io(i, lambda: check(i))
            w.end()
        return body

    bodies = [writer_body(w) if w.ctx.rank < half else reader_body(w, ctxs[w.ctx.rank - half])
              for w in workers]
    return _execute(env, config, workers, bodies, repetition, epoch)


def _ior_oid(config: BenchmarkConfig, seed: int, rank: int) -> ObjectId:
    return ObjectId(object_prefix(config, seed, rank), config.array_class)


def run_ior_segments(config: BenchmarkConfig, env: Environment | None = None, repetition: int = 0) -> EventLog:
    """IOR segments mode, file-per-process: one ``object_size * ios`` transfer per process.

    Each process runs: initial barrier, pre-I/O barrier, object create/open,
    transfer, close, post-I/O barrier, logging, final barrier. A write phase
    is followed by a read phase over the same objects (rank-matched).
    """
    env = env or make_environment(config)
    seed = config.seed + repetition
    epoch = env.runtime.now_ns()
    backend, runtime = env.backend, env.runtime
    try:
        cont = backend.create_container(env.pool, IOR_CONTAINER_ID)
    except AlreadyExists:
        cont = backend.open_container(env.pool, IOR_CONTAINER_ID)
    transfer_size = config.object_size * config.ios
    ctxs = worker_contexts(config)

    def make(w: _Worker, phase: Phase):
        oid = _ior_oid(config, seed, w.ctx.rank)

        def io():
            if phase is Phase.WRITE:
                arr = backend.array_create(cont, oid)
            else:
                arr = backend.array_open(cont, oid)
            w.trace(Event.OPEN_END)
            w.trace(Event.TRANSFER_START)
            if phase is Phase.WRITE:
                backend.array_write(arr, 0, data)
                w.writes += 1
                nbytes = len(data)
            else:
                got = backend.array_read(arr, 0, transfer_size)
                nbytes = len(got)
                if config.verify:
                    if got != data:
                        raise IntegrityError(f"IOR object of rank {w.ctx.rank} read back wrong")
                    w.verified += 1
            w.trace(Event.TRANSFER_END, nbytes)
            w.trace(Event.CLOSE_START)
            backend.array_close(arr)
            w.trace(Event.CLOSE_END)

        data = None

        def body():
            nonlocal data
            w.begin(phase)
            runtime.barrier()  # a) initial
            data = make_payload(seed, w.ctx.node, w.ctx.process, 0, transfer_size)
            runtime.barrier()  # b) pre-I/O
            w.iteration = 0
            t = runtime.now_ns() + w.buffer.skew_ns
            w.buffer.record(phase, 0, Event.IO_START, timestamp=t)
            w.buffer.record(phase, 0, Event.OPEN_START, timestamp=t)
            try:
                io()
            except WorkloadError:
                raise
            except Exception as exc:
                raise WorkloadError(f"I/O failed at node={w.ctx.node} process={w.ctx.process} iteration=0 "
                                    f"({phase.value}): {exc!r}",
                                    identity=WorkerIdentity(w.ctx.node, w.ctx.process, 0)) from exc
            w.buffer.record(phase, 0, Event.IO_END)
            runtime.barrier()  # f) post-I/O
            runtime.barrier()  # h) final
            w.end()
        return body

    logs = []
    for phase in (Phase.WRITE, Phase.READ):
        workers = [_Worker(env, config, ctx, seed) for ctx in ctxs]
        logs.append(_execute(env, config, workers, [make(w, phase) for w in workers], repetition, epoch))
    return _combine(logs)


def run_benchmark(config: BenchmarkConfig, env: Environment | None = None, repetition: int = 0) -> EventLog:
    if config.driver is Driver.IOR:
        return run_ior_segments(config, env, repetition)
    if config.pattern is Pattern.B:
        return run_pattern_b(config, env, repetition)
    return run_pattern_a(config, env, repetition)


def run_census(env: Environment, config: BenchmarkConfig) -> Census:
    mode = config.mode if config.driver is Driver.FIELDIO else FieldStoreMode.NO_INDEX
    return census(env.backend, env.pool, mode)
