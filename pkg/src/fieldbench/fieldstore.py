"""Weather-field write and read over the Key-Value/Array object model.

Layout in ``Full`` mode::

    main container
        main Key-Value:    most-significant key -> (index container, forecast Key-Value)
    forecast index container (id = md5 of most-significant key)
        forecast Key-Value: least-significant key -> (store container, Array)
                            "__store_container"   -> store container id
    forecast store container (id = md5 of most-significant key + "#store")
        one Array per field write

``NoContainers`` keeps the same Key-Values and Arrays but puts all of them in
the main container. ``NoIndex`` uses no Key-Values: the Array id is the md5
of the whole key, in the main container.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

from .backend.model import ContainerHandle, ContainerId, ObjectClass, ObjectId, PoolHandle
from .errors import (
    AlreadyExists,
    ArrayMissing,
    ContainerNotFound,
    ForecastIndexNotFound,
    InvalidKey,
    MainIndexNotFound,
    ObjectNotFound,
)
from .telemetry import Event

MAIN_CONTAINER_ID = ContainerId.from_bytes(b"fieldbench:main")
STORE_ENTRY = b"__store_container"
_STORE_SUFFIX = b"#store"


class FieldStoreMode(str, Enum):
    FULL = "full"
    NO_CONTAINERS = "nocontainers"
    NO_INDEX = "noindex"

    @property
    def indexed(self) -> bool:
        return self is not FieldStoreMode.NO_INDEX


def _canonical(part: Mapping[str, str]) -> bytes:
    items = []
    for k, v in sorted(part.items()):
        k, v = str(k), str(v)
        if not k or any(c in k for c in ",=;") or any(c in v for c in ",=;"):
            raise InvalidKey(f"bad key entry {k!r}={v!r}")
        items.append(f"{k}={v}")
    return ",".join(items).encode()


@dataclass(frozen=True)
class FieldKey:
    """Key of one field, split into forecast identity and field-within-forecast."""

    most_significant: Mapping[str, str]
    least_significant: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "most_significant", dict(self.most_significant))
        object.__setattr__(self, "least_significant", dict(self.least_significant))

    def __hash__(self):
        return hash((self.ms_bytes, self.ls_bytes))

    @property
    def ms_bytes(self) -> bytes:
        return _canonical(self.most_significant)

    @property
    def ls_bytes(self) -> bytes:
        return _canonical(self.least_significant)

    @property
    def full_bytes(self) -> bytes:
        return self.ms_bytes + b";" + self.ls_bytes

    def validate(self, mode: FieldStoreMode):
        if mode.indexed and not (self.most_significant and self.least_significant):
            raise InvalidKey("both key parts must be non-empty in indexed modes")
        if not (self.most_significant or self.least_significant):
            raise InvalidKey("empty field key")
        self.full_bytes

    def __str__(self):
        return self.full_bytes.decode()


def derive_container_id(most_significant: bytes) -> ContainerId:
    """md5 of the canonical most-significant key bytes."""
    if not most_significant:
        raise InvalidKey("cannot derive a container id from an empty key")
    return ContainerId.from_bytes(bytes(most_significant))


def forecast_container_ids(ms: bytes) -> tuple[ContainerId, ContainerId]:
    """(index container, store container) of one forecast."""
    return derive_container_id(ms), derive_container_id(ms + _STORE_SUFFIX)


def _ref(cid: ContainerId, oid: ObjectId) -> bytes:
    return cid.raw + oid.to_bytes()


def _unref(value: bytes) -> tuple[ContainerId, ObjectId]:
    return ContainerId(value[:16]), ObjectId.from_bytes(value[16:32])


# Defaults count down so they never meet the small prefixes the workload assigns by rank.
_default_prefixes = itertools.count(0xFFFFFFFF, -1)
_prefix_lock = threading.Lock()


def _next_prefix() -> int:
    with _prefix_lock:
        return next(_default_prefixes)


Tracer = Callable[..., None]


@dataclass(eq=False)
class FieldStore:
    backend: object
    pool: PoolHandle
    mode: FieldStoreMode
    main_container: ContainerHandle
    main_index: ObjectId | None
    kv_object_class: ObjectClass = ObjectClass.SX
    array_object_class: ObjectClass = ObjectClass.S1
    oid_prefix: int = 0
    tracer: Tracer | None = None
    handle_cache: dict = field(default_factory=dict)
    _counter: itertools.count = field(default_factory=itertools.count)

    @classmethod
    def open(cls, backend, pool: PoolHandle, mode: FieldStoreMode | str = FieldStoreMode.FULL,
             kv_object_class: ObjectClass = ObjectClass.SX, array_object_class: ObjectClass = ObjectClass.S1,
             oid_prefix: int | None = None, tracer: Tracer | None = None) -> "FieldStore":
        """Attach to (creating if needed) the main container and main index."""
        mode = FieldStoreMode(mode)
        if oid_prefix is None:
            oid_prefix = _next_prefix()
        if not 0 < oid_prefix < (1 << 32):
            raise ValueError("oid_prefix must be a non-zero 32-bit value")
        try:
            main = backend.create_container(pool, MAIN_CONTAINER_ID)
        except AlreadyExists:
            main = backend.open_container(pool, MAIN_CONTAINER_ID)
        main_index = None
        if mode.indexed:
            main_index = backend.kv_open(main, ObjectId(0, kv_object_class))
        store = cls(backend, pool, mode, main, main_index, kv_object_class, array_object_class,
                    oid_prefix, tracer)
        store.handle_cache[MAIN_CONTAINER_ID] = main
        return store

    def _trace(self, event: Event, size: int = 0):
        if self.tracer is not None:
            self.tracer(event, size)

    def _container(self, cid: ContainerId, create: bool = False) -> ContainerHandle:
        handle = self.handle_cache.get(cid)
        if handle is not None:
            return handle
        if create:
            try:
                handle = self.backend.create_container(self.pool, cid)
            except AlreadyExists:
                # Lost a creation race; the winner's container is identical.
                handle = self.backend.open_container(self.pool, cid)
        else:
            handle = self.backend.open_container(self.pool, cid)
        self.handle_cache[cid] = handle
        return handle

    def _new_array_id(self) -> ObjectId:
        return ObjectId((self.oid_prefix << 64) | next(self._counter), self.array_object_class)

    def _forecast_layout(self, ms: bytes) -> tuple[ContainerId, ContainerId, ObjectId]:
        if self.mode is FieldStoreMode.FULL:
            index_cid, store_cid = forecast_container_ids(ms)
            return index_cid, store_cid, ObjectId(0, self.kv_object_class)
        return MAIN_CONTAINER_ID, MAIN_CONTAINER_ID, ObjectId.from_digest(ms, self.kv_object_class)

    # write

    def write(self, key: FieldKey, data: bytes):
        key.validate(self.mode)
        if not data:
            raise ValueError("field data must be non-empty")
        if self.mode is FieldStoreMode.NO_INDEX:
            self._write_unindexed(key, data)
            return
        backend = self.backend
        ms, ls = key.ms_bytes, key.ls_bytes
        ref = backend.kv_get(self.main_container, self.main_index, ms)
        if ref is None:
            index_cid, store_cid, forecast_kv = self._forecast_layout(ms)
            index = self._container(index_cid, create=True)
            self._container(store_cid, create=True)
            backend.kv_open(index, forecast_kv)
            backend.kv_put(index, forecast_kv, STORE_ENTRY, store_cid.raw)
            backend.kv_put(self.main_container, self.main_index, ms, _ref(index_cid, forecast_kv))
        else:
            index_cid, forecast_kv = _unref(ref)
            index = self._container(index_cid)
            store_raw = backend.kv_get(index, forecast_kv, STORE_ENTRY)
            if store_raw is None:
                raise ForecastIndexNotFound(f"forecast index of {ms.decode()} lacks its store entry")
            store_cid = ContainerId(store_raw)

        store = self._container(store_cid)
        oid = self._new_array_id()
        self._trace(Event.OPEN_START)
        arr = backend.array_create(store, oid)
        self._trace(Event.OPEN_END)
        self._transfer_out(arr, data)
        backend.kv_put(index, forecast_kv, ls, _ref(store_cid, oid))

    def _transfer_out(self, arr, data: bytes):
        self._trace(Event.TRANSFER_START)
        self.backend.array_write(arr, 0, data)
        if arr.length > len(data):
            self.backend.array_set_size(arr, len(data))
        self._trace(Event.TRANSFER_END, len(data))
        self._trace(Event.CLOSE_START)
        self.backend.array_close(arr)
        self._trace(Event.CLOSE_END)

    def _write_unindexed(self, key: FieldKey, data: bytes):
        oid = ObjectId.from_digest(key.full_bytes, self.array_object_class)
        self._trace(Event.OPEN_START)
        try:
            arr = self.backend.array_create(self.main_container, oid)
        except AlreadyExists:
            arr = self.backend.array_open(self.main_container, oid)
        self._trace(Event.OPEN_END)
        self._transfer_out(arr, data)

    # read

    def read(self, key: FieldKey) -> bytes:
        key.validate(self.mode)
        backend = self.backend
        if self.mode is FieldStoreMode.NO_INDEX:
            return self._read_array(self.main_container, ObjectId.from_digest(key.full_bytes, self.array_object_class), key)
        ms, ls = key.ms_bytes, key.ls_bytes
        ref = backend.kv_get(self.main_container, self.main_index, ms)
        if ref is None:
            raise MainIndexNotFound(f"forecast {ms.decode()} not in main index")
        index_cid, forecast_kv = _unref(ref)
        entry = backend.kv_get(self._container(index_cid), forecast_kv, ls)
        if entry is None:
            raise ForecastIndexNotFound(f"field {ls.decode()} not in forecast {ms.decode()}")
        store_cid, oid = _unref(entry)
        try:
            store = self._container(store_cid)
        except ContainerNotFound:
            raise ArrayMissing(f"store container {store_cid} of {key} is missing") from None
        return self._read_array(store, oid, key)

    def _read_array(self, cont: ContainerHandle, oid: ObjectId, key: FieldKey) -> bytes:
        self._trace(Event.OPEN_START)
        try:
            arr = self.backend.array_open(cont, oid)
        except ObjectNotFound:
            raise ArrayMissing(f"array {oid} of {key} is missing") from None
        self._trace(Event.OPEN_END)
        self._trace(Event.TRANSFER_START)
        data = self.backend.array_read(arr, 0, arr.length)
        self._trace(Event.TRANSFER_END, len(data))
        self._trace(Event.CLOSE_START)
        self.backend.array_close(arr)
        self._trace(Event.CLOSE_END)
        return data


def field_store_open(backend, pool, mode=FieldStoreMode.FULL, kv_object_class=ObjectClass.SX,
                     array_object_class=ObjectClass.S1, **kwargs) -> FieldStore:
    return FieldStore.open(backend, pool, mode, kv_object_class, array_object_class, **kwargs)


def field_write(store: FieldStore, key: FieldKey, data: bytes):
    store.write(key, data)


def field_read(store: FieldStore, key: FieldKey) -> bytes:
    return store.read(key)


@dataclass(frozen=True)
class Census:
    containers: int
    key_values: int
    arrays: int
    unreferenced_arrays: int

    def as_dict(self) -> dict:
        return {"containers": self.containers, "key_values": self.key_values,
                "arrays": self.arrays, "unreferenced_arrays": self.unreferenced_arrays}


def census(backend, pool: PoolHandle, mode: FieldStoreMode | str) -> Census:
    """Count objects in a pool and the Arrays no index entry points at.

    In ``NoIndex`` mode Arrays are addressed by key digest, so none counts as
    unreferenced.
    """
    mode = FieldStoreMode(mode)
    containers = backend.list_containers(pool)
    kvs, arrays, referenced = 0, [], set()
    for cid in containers:
        for oid, kind in backend.list_objects(pool, cid):
            if kind == "array":
                arrays.append((cid, oid))
                continue
            kvs += 1
            for k, v in backend.kv_items(pool, cid, oid):
                if k != STORE_ENTRY and len(v) == 32:
                    referenced.add(_unref(v))
    unreferenced = 0 if not mode.indexed else sum(1 for a in arrays if a not in referenced)
    return Census(len(containers), kvs, len(arrays), unreferenced)
