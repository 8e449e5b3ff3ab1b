"""Exact in-memory reference backend."""

from __future__ import annotations

import bisect
import itertools
import threading
from collections import defaultdict
from dataclasses import dataclass, field

from ..errors import (
    AlreadyExists,
    BackendError,
    ContainerNotFound,
    ObjectNotFound,
    OutOfBounds,
    PoolNotFound,
)
from .model import (
    MiB,
    ArrayHandle,
    ContainerHandle,
    ContainerId,
    ObjectId,
    PoolHandle,
    SimTopology,
)


class Extents:
    """Sparse extent map; unwritten gaps read as zeros."""

    __slots__ = ("starts", "chunks", "length")

    def __init__(self):
        self.starts: list[int] = []
        self.chunks: list[bytes] = []
        self.length = 0

    def write(self, offset: int, data: bytes):
        if not data:
            return
        end = offset + len(data)
        starts, chunks = [], []
        for s, chunk in zip(self.starts, self.chunks):
            e = s + len(chunk)
            if e <= offset or s >= end:
                starts.append(s)
                chunks.append(chunk)
                continue
            if s < offset:
                starts.append(s)
                chunks.append(chunk[: offset - s])
            if e > end:
                starts.append(end)
                chunks.append(chunk[end - s:])
        i = bisect.bisect_left(starts, offset)
        starts.insert(i, offset)
        chunks.insert(i, data)
        self.starts, self.chunks = starts, chunks
        self.length = max(self.length, end)

    def read(self, offset: int, length: int) -> bytes:
        if length == 0:
            return b""
        # Fast path: the request covers exactly one stored extent.
        i = bisect.bisect_right(self.starts, offset) - 1
        if i >= 0 and self.starts[i] == offset and len(self.chunks[i]) == length:
            return self.chunks[i]
        out = bytearray(length)
        end = offset + length
        for s, chunk in zip(self.starts, self.chunks):
            e = s + len(chunk)
            if e <= offset or s >= end:
                continue
            lo, hi = max(s, offset), min(e, end)
            out[lo - offset:hi - offset] = chunk[lo - s:hi - s]
        return bytes(out)

    def set_size(self, size: int):
        starts, chunks = [], []
        for s, chunk in zip(self.starts, self.chunks):
            if s >= size:
                continue
            starts.append(s)
            chunks.append(chunk[: size - s])
        self.starts, self.chunks = starts, chunks
        self.length = size

    @property
    def stored_bytes(self) -> int:
        return sum(len(c) for c in self.chunks)


@dataclass(eq=False)
class _Kv:
    oid: ObjectId
    entries: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass(eq=False)
class _Array:
    oid: ObjectId
    stripe_count: int
    start_target: int
    data: Extents = field(default_factory=Extents)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def length(self) -> int:
        return self.data.length


@dataclass(eq=False)
class _Container:
    cid: ContainerId
    objects: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass(eq=False)
class _Pool:
    handle: PoolHandle
    containers: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def stripe_layout(oid: ObjectId, start_target: int, stripe_count: int, target_count: int,
                  offset: int, length: int, cell_size: int) -> dict[int, int]:
    """Bytes of ``[offset, offset+length)`` landing on each target.

    Cells of ``cell_size`` bytes go round-robin over ``stripe_count``
    consecutive targets beginning at ``start_target``.
    """
    layout: dict[int, int] = defaultdict(int)
    pos, end = offset, offset + length
    while pos < end:
        cell = pos // cell_size
        cell_end = min((cell + 1) * cell_size, end)
        target = (start_target + cell % stripe_count) % target_count
        layout[target] += cell_end - pos
        pos = cell_end
    return dict(layout)


class MemoryBackend:
    """Thread-safe, ephemeral object store holding everything in RAM."""

    _pool_ids = itertools.count()

    def __init__(self, topology: SimTopology | None = None):
        self.topology = topology
        self._pools: dict[str, _Pool] = {}
        self._lock = threading.Lock()

    # pools and containers

    def create_pool(self, topology: SimTopology | None = None, pool_id: str | None = None) -> PoolHandle:
        topology = topology or self.topology
        target_count = topology.target_count if topology else 1
        with self._lock:
            if pool_id is None:
                pool_id = f"pool-{next(self._pool_ids)}"
            existing = self._pools.get(pool_id)
            if existing is not None:
                return existing.handle
            handle = PoolHandle(pool_id, target_count, topology)
            self._pools[pool_id] = _Pool(handle)
            return handle

    def _pool(self, pool: PoolHandle) -> _Pool:
        try:
            return self._pools[pool.pool_id]
        except KeyError:
            raise PoolNotFound(pool.pool_id) from None

    def create_container(self, pool: PoolHandle, cid: ContainerId) -> ContainerHandle:
        p = self._pool(pool)
        with p.lock:
            if cid in p.containers:
                raise AlreadyExists(f"container {cid}")
            p.containers[cid] = _Container(cid)
        return ContainerHandle(cid, pool)

    def open_container(self, pool: PoolHandle, cid: ContainerId) -> ContainerHandle:
        p = self._pool(pool)
        if cid not in p.containers:
            raise ContainerNotFound(f"container {cid}")
        return ContainerHandle(cid, pool)

    def close_container(self, cont: ContainerHandle):
        cont.close()

    def _container(self, cont: ContainerHandle) -> _Container:
        cont.check_open()
        return self._pool(cont.pool).containers[cont.container_id]

    # key-values

    def _kv(self, cont: ContainerHandle, oid: ObjectId, create: bool) -> _Kv | None:
        c = self._container(cont)
        obj = c.objects.get(oid)
        if obj is None:
            if not create:
                return None
            with c.lock:
                obj = c.objects.setdefault(oid, _Kv(oid))
        if not isinstance(obj, _Kv):
            raise BackendError(f"object {oid} is not a Key-Value")
        return obj

    def kv_open(self, cont: ContainerHandle, oid: ObjectId) -> ObjectId:
        """Open a Key-Value, creating it if absent."""
        self._kv(cont, oid, create=True)
        return oid

    def kv_put(self, cont: ContainerHandle, oid: ObjectId, key: bytes, value: bytes):
        kv = self._kv(cont, oid, create=True)
        with kv.lock:
            kv.entries[bytes(key)] = bytes(value)

    def kv_get(self, cont: ContainerHandle, oid: ObjectId, key: bytes) -> bytes | None:
        """Stored value, or None when the key (or the Key-Value) is absent."""
        kv = self._kv(cont, oid, create=False)
        if kv is None:
            return None
        with kv.lock:
            return kv.entries.get(bytes(key))

    # arrays

    def _new_array(self, cont: ContainerHandle, oid: ObjectId) -> _Array:
        target_count = cont.pool.target_count
        return _Array(oid, oid.object_class.stripe_count(target_count), oid.placement_hash() % target_count)

    def array_create(self, cont: ContainerHandle, oid: ObjectId) -> ArrayHandle:
        c = self._container(cont)
        with c.lock:
            if oid in c.objects:
                raise AlreadyExists(f"object {oid}")
            arr = c.objects[oid] = self._new_array(cont, oid)
        return ArrayHandle(cont, oid, arr.stripe_count, _array=arr)

    def array_open(self, cont: ContainerHandle, oid: ObjectId) -> ArrayHandle:
        c = self._container(cont)
        arr = c.objects.get(oid)
        if not isinstance(arr, _Array):
            raise ObjectNotFound(f"array {oid}")
        return ArrayHandle(cont, oid, arr.stripe_count, _array=arr)

    def array_close(self, arr: ArrayHandle):
        arr.close()

    def array_write(self, arr: ArrayHandle, offset: int, data: bytes):
        arr.check_open()
        if offset < 0:
            raise OutOfBounds(f"negative offset {offset}")
        a = arr._array
        with a.lock:
            a.data.write(offset, bytes(data))

    def array_read(self, arr: ArrayHandle, offset: int, length: int) -> bytes:
        arr.check_open()
        a = arr._array
        with a.lock:
            if offset < 0 or length < 0 or offset + length > a.length:
                raise OutOfBounds(f"read [{offset}, {offset + length}) beyond length {a.length}")
            return a.data.read(offset, length)

    def array_set_size(self, arr: ArrayHandle, size: int):
        arr.check_open()
        a = arr._array
        with a.lock:
            a.data.set_size(size)

    @property
    def cell_size(self) -> int:
        return self.topology.cell_size if self.topology else MiB

    def stripe_distribution(self, arr: ArrayHandle, offset: int = 0, length: int | None = None) -> dict[int, int]:
        a = arr._array
        if length is None:
            length = a.length - offset
        return stripe_layout(arr.oid, a.start_target, a.stripe_count, arr.container.pool.target_count,
                             offset, length, self.cell_size)

    # introspection, used by the census

    def list_containers(self, pool: PoolHandle) -> list[ContainerId]:
        return sorted(self._pool(pool).containers)

    def list_objects(self, pool: PoolHandle, cid: ContainerId) -> list[tuple[ObjectId, str]]:
        c = self._pool(pool).containers[cid]
        return [(oid, "kv" if isinstance(obj, _Kv) else "array")
                for oid, obj in sorted(c.objects.items(), key=lambda kv: kv[0].encode())]

    def kv_items(self, pool: PoolHandle, cid: ContainerId, oid: ObjectId) -> list[tuple[bytes, bytes]]:
        kv = self._pool(pool).containers[cid].objects[oid]
        with kv.lock:
            return sorted(kv.entries.items())
