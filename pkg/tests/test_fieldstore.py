import hashlib
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldbench.backend import ContainerId, MemoryBackend, MiB, ObjectClass, SimBackend, SimTopology
from fieldbench.errors import ArrayMissing, ForecastIndexNotFound, InvalidKey, MainIndexNotFound
from fieldbench.fieldstore import (
    MAIN_CONTAINER_ID,
    FieldKey,
    FieldStore,
    FieldStoreMode,
    census,
    derive_container_id,
    field_read,
    field_store_open,
    field_write,
    forecast_container_ids,
)
from fieldbench.runtime import VirtualRuntime
from fieldbench.telemetry import Event

MODES = list(FieldStoreMode)


def key(step=0, date="20201224", param="130"):
    return FieldKey({"class": "od", "date": date}, {"param": param, "step": str(step)})


def new_store(mode, backend=None, **kw):
    backend = backend or MemoryBackend(SimTopology())
    pool = backend.create_pool()
    return FieldStore.open(backend, pool, mode, **kw), backend, pool


# keys and ids


def test_canonical_serialisation_is_sorted():
    k = FieldKey({"date": "20201224", "class": "od"}, {"step": "1", "param": "130"})
    assert k.ms_bytes == b"class=od,date=20201224"
    assert k.ls_bytes == b"param=130,step=1"
    assert k == FieldKey({"class": "od", "date": "20201224"}, {"param": "130", "step": "1"})


def test_derive_container_id_is_md5_of_canonical_bytes():
    ms = b"class=od,date=20201224"
    # md5 via an independent route: the stdlib constructor fed incrementally
    h = hashlib.new("md5")
    for chunk in (ms[:5], ms[5:]):
        h.update(chunk)
    assert derive_container_id(ms).raw == h.digest()
    assert derive_container_id(ms) == derive_container_id(bytes(ms))
    assert derive_container_id(ms) != derive_container_id(b"class=od,date=20201225")
    with pytest.raises(InvalidKey):
        derive_container_id(b"")


def test_forecast_container_pair_is_distinct():
    index, store = forecast_container_ids(b"class=od,date=20201224")
    assert index != store


@pytest.mark.parametrize("bad", [{"a,b": "1"}, {"a": "x=y"}, {"": "1"}, {"a": "1;2"}])
def test_invalid_key_characters(bad):
    with pytest.raises(InvalidKey):
        FieldKey(bad, {"p": "1"}).ms_bytes


def test_indexed_modes_need_both_parts():
    store, _, _ = new_store(FieldStoreMode.FULL)
    with pytest.raises(InvalidKey):
        store.write(FieldKey({"class": "od"}, {}), b"x")
    nostore, _, _ = new_store(FieldStoreMode.NO_INDEX)
    nostore.write(FieldKey({"class": "od"}, {}), b"x")


# round trips and layouts


@pytest.mark.parametrize("mode", MODES)
def test_round_trip_one_mib(mode):
    store, _, _ = new_store(mode)
    data = bytes(range(256)) * 4096
    field_write(store, key(), data)
    assert field_read(store, key()) == data


@pytest.mark.parametrize("mode", MODES)
def test_rewrite_returns_latest_and_keeps_old_array(mode):
    store, backend, pool = new_store(mode)
    store.write(key(), b"first" * 100)
    store.write(key(), b"second")
    assert store.read(key()) == b"second"
    c = census(backend, pool, mode)
    if mode.indexed:
        assert (c.arrays, c.unreferenced_arrays) == (2, 1)
    else:
        # NoIndex re-writes the digest-addressed Array in place
        assert (c.arrays, c.unreferenced_arrays) == (1, 0)


def test_full_mode_layout():
    store, backend, pool = new_store(FieldStoreMode.FULL)
    for date in ("20201224", "20201225", "20201226"):
        for step in range(4):
            store.write(key(step, date), b"x")
    c = census(backend, pool, FieldStoreMode.FULL)
    assert c.containers == 1 + 2 * 3
    assert c.key_values == 1 + 3
    assert c.arrays == 12
    index, store_cid = forecast_container_ids(key(0, "20201224").ms_bytes)
    assert set(backend.list_containers(pool)) >= {MAIN_CONTAINER_ID, index, store_cid}


def test_nocontainers_mode_keeps_everything_in_main():
    store, backend, pool = new_store(FieldStoreMode.NO_CONTAINERS)
    for date in ("20201224", "20201225"):
        for step in range(3):
            store.write(key(step, date), b"x")
    c = census(backend, pool, FieldStoreMode.NO_CONTAINERS)
    assert backend.list_containers(pool) == [MAIN_CONTAINER_ID]
    assert (c.containers, c.key_values, c.arrays) == (1, 3, 6)


def test_noindex_open_creates_no_key_values():
    store, backend, pool = new_store(FieldStoreMode.NO_INDEX)
    assert census(backend, pool, FieldStoreMode.NO_INDEX).key_values == 0
    for step in range(5):
        store.write(key(step), b"x")
    c = census(backend, pool, FieldStoreMode.NO_INDEX)
    assert (c.containers, c.key_values, c.arrays) == (1, 0, 5)


def test_open_twice_attaches_to_existing_state():
    backend = MemoryBackend()
    pool = backend.create_pool()
    a = field_store_open(backend, pool, FieldStoreMode.FULL)
    a.write(key(), b"payload")
    b = field_store_open(backend, pool, FieldStoreMode.FULL)
    assert b.read(key()) == b"payload"
    assert census(backend, pool, FieldStoreMode.FULL).containers == 3


def test_handle_cache_returns_same_handle():
    store, _, _ = new_store(FieldStoreMode.FULL)
    store.write(key(0), b"a")
    index, _ = forecast_container_ids(key().ms_bytes)
    h = store.handle_cache[index]
    store.write(key(1), b"b")
    store.read(key(0))
    assert store.handle_cache[index] is h


def test_two_thousand_fields_from_one_process():
    store, _, _ = new_store(FieldStoreMode.FULL)
    for i in range(2000):
        store.write(key(i), i.to_bytes(4, "big") * 16)
    assert all(store.read(key(i)) == i.to_bytes(4, "big") * 16 for i in range(2000))


# failures


def test_distinct_not_found_outcomes():
    store, backend, pool = new_store(FieldStoreMode.FULL)
    with pytest.raises(MainIndexNotFound):
        store.read(key())
    store.write(key(0), b"x")
    with pytest.raises(ForecastIndexNotFound):
        store.read(key(1))
    nostore, _, _ = new_store(FieldStoreMode.NO_INDEX)
    with pytest.raises(ArrayMissing):
        nostore.read(key())


def test_missing_store_container_reported_as_missing_array():
    store, backend, pool = new_store(FieldStoreMode.FULL)
    store.write(key(), b"x")
    _, store_cid = forecast_container_ids(key().ms_bytes)
    del backend._pools[pool.pool_id].containers[store_cid]
    fresh = FieldStore.open(backend, pool, FieldStoreMode.FULL)
    with pytest.raises(ArrayMissing):
        fresh.read(key())


def test_empty_payload_rejected():
    store, _, _ = new_store(FieldStoreMode.FULL)
    with pytest.raises(ValueError):
        store.write(key(), b"")


# tracing and object classes


def test_tracer_sees_sub_events_in_order():
    seen = []
    store, _, _ = new_store(FieldStoreMode.FULL, tracer=lambda ev, size=0: seen.append((ev, size)))
    store.write(key(), b"12345")
    assert [e for e, _ in seen] == [Event.OPEN_START, Event.OPEN_END, Event.TRANSFER_START, Event.TRANSFER_END,
                                    Event.CLOSE_START, Event.CLOSE_END]
    assert seen[3] == (Event.TRANSFER_END, 5)


def test_object_classes_apply():
    store, backend, pool = new_store(FieldStoreMode.NO_CONTAINERS, array_object_class=ObjectClass.S2)
    store.write(key(), b"x" * MiB)
    arrays = [oid for oid, kind in backend.list_objects(pool, MAIN_CONTAINER_ID) if kind == "array"]
    assert [a.object_class for a in arrays] == [ObjectClass.S2]
    kvs = [oid for oid, kind in backend.list_objects(pool, MAIN_CONTAINER_ID) if kind == "kv"]
    assert {k.object_class for k in kvs} == {ObjectClass.SX}


# properties


@settings(max_examples=25, deadline=None)
@given(ops=st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5), st.binary(min_size=1, max_size=64)),
                    min_size=1, max_size=30))
def test_modes_agree_and_garbage_is_accounted(ops):
    """All modes read the same bytes; indexed modes keep one Array per write."""
    results = {}
    for mode in MODES:
        store, backend, pool = new_store(mode)
        for d, s, data in ops:
            store.write(key(s, f"2020122{d}"), data)
        results[mode] = {(d, s): store.read(key(s, f"2020122{d}")) for d, s, _ in ops}
        c = census(backend, pool, mode)
        distinct = len({(d, s) for d, s, _ in ops})
        if mode.indexed:
            assert c.arrays == len(ops)
            assert c.unreferenced_arrays == len(ops) - distinct
        else:
            assert c.arrays == distinct and c.key_values == 0
    assert results[FieldStoreMode.FULL] == results[FieldStoreMode.NO_CONTAINERS] == results[FieldStoreMode.NO_INDEX]


@pytest.mark.parametrize("mode", [FieldStoreMode.FULL, FieldStoreMode.NO_CONTAINERS])
def test_concurrent_first_writes_of_one_forecast(mode):
    backend = MemoryBackend(SimTopology())
    pool = backend.create_pool()
    n = 16
    barrier = threading.Barrier(n)
    errors = []

    def worker(i):
        store = FieldStore.open(backend, pool, mode)
        barrier.wait()
        try:
            store.write(key(i), bytes([i]) * 100)
        except Exception as exc:  # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    reader = FieldStore.open(backend, pool, mode)
    assert all(reader.read(key(i)) == bytes([i]) * 100 for i in range(n))
    expected = 3 if mode is FieldStoreMode.FULL else 1
    assert census(backend, pool, mode).containers == expected


def test_sim_backend_matches_memory_results():
    mem, _, _ = new_store(FieldStoreMode.FULL)
    sim, _, _ = new_store(FieldStoreMode.FULL, SimBackend(SimTopology(), VirtualRuntime()))
    for s in (mem, sim):
        for i in range(10):
            s.write(key(i % 4), bytes([i]) * (i + 1))
    assert [mem.read(key(i)) for i in range(4)] == [sim.read(key(i)) for i in range(4)]


def test_container_id_type():
    assert isinstance(derive_container_id(b"x"), ContainerId)
