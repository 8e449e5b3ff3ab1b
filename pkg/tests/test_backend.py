import hashlib
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldbench.backend import (
    ContainerId,
    FileBackend,
    MemoryBackend,
    MiB,
    ObjectClass,
    ObjectId,
    SimBackend,
    SimTopology,
    create_pool,
    sim_transfer_time,
    stripe_layout,
)
from fieldbench.errors import (
    AlreadyExists,
    ClosedHandle,
    ConfigError,
    ContainerNotFound,
    ObjectNotFound,
    OutOfBounds,
    PoolNotFound,
)
from fieldbench.runtime import VirtualRuntime

CID = ContainerId.from_bytes(b"test")


@pytest.fixture(params=["memory", "sim", "file"])
def backend(request, tmp_path):
    if request.param == "memory":
        return MemoryBackend(SimTopology())
    if request.param == "sim":
        return SimBackend(SimTopology(), VirtualRuntime())
    return FileBackend(tmp_path, SimTopology())


# identifiers


@given(bits=st.integers(0, (1 << 96) - 1), cls=st.sampled_from(list(ObjectClass)))
def test_object_id_round_trip(bits, cls):
    oid = ObjectId(bits, cls)
    assert ObjectId.decode(oid.encode()) == oid
    assert ObjectId.from_bytes(oid.to_bytes()) == oid
    assert oid.encode() < 1 << 128


@given(a=st.integers(0, (1 << 96) - 1), b=st.integers(0, (1 << 96) - 1),
       ca=st.sampled_from(list(ObjectClass)), cb=st.sampled_from(list(ObjectClass)))
def test_object_id_encoding_is_injective(a, b, ca, cb):
    assert (ObjectId(a, ca).encode() == ObjectId(b, cb).encode()) == ((a, ca) == (b, cb))


def test_object_id_rejects_wide_user_bits():
    with pytest.raises(ValueError):
        ObjectId(1 << 96)


def test_object_class_stripe_counts():
    assert ObjectClass.S1.stripe_count(24) == 1
    assert ObjectClass.S2.stripe_count(24) == 2
    assert ObjectClass.SX.stripe_count(24) == 24
    assert ObjectClass.parse("OC_SX") is ObjectClass.SX
    with pytest.raises(ValueError):
        ObjectClass.parse("S7")


def test_container_id_is_md5():
    assert ContainerId.from_bytes(b"abc").raw == hashlib.md5(b"abc").digest()
    assert ContainerId.from_bytes(b"abc") == ContainerId.from_bytes(b"abc")
    assert ContainerId.from_bytes(b"abc") != ContainerId.from_bytes(b"abd")


# pools and topology


@pytest.mark.parametrize("nodes,engines,targets,expected", [(1, 2, 12, 24), (1, 1, 1, 1), (8, 2, 12, 192)])
def test_pool_target_count(nodes, engines, targets, expected):
    topo = SimTopology(server_node_count=nodes, engines_per_node=engines, targets_per_engine=targets)
    assert topo.target_count == expected
    assert create_pool(MemoryBackend(), topo).target_count == expected


def test_pool_creation_is_idempotent_per_id():
    b = MemoryBackend()
    p1 = b.create_pool(SimTopology(), "p")
    p2 = b.create_pool(SimTopology(), "p")
    assert p1 == p2
    assert b.create_pool(SimTopology()) != p1


@pytest.mark.parametrize("field,value", [("server_node_count", 0), ("per_target_bandwidth", 0.0),
                                         ("per_op_latency", -1.0), ("per_interface_bandwidth", -5.0)])
def test_invalid_topology(field, value):
    with pytest.raises(ConfigError):
        SimTopology(**{field: value})


def test_unknown_pool(backend):
    from fieldbench.backend.model import PoolHandle

    with pytest.raises(PoolNotFound):
        backend.create_container(PoolHandle("nope", 1, None), CID)


# containers


def test_container_create_open_close(backend):
    pool = backend.create_pool()
    c = backend.create_container(pool, CID)
    assert c.is_open
    with pytest.raises(AlreadyExists):
        backend.create_container(pool, CID)
    again = backend.open_container(pool, CID)
    assert again.container_id == CID
    backend.close_container(again)
    with pytest.raises(ClosedHandle):
        backend.kv_put(again, ObjectId(0, ObjectClass.SX), b"k", b"v")
    assert backend.open_container(pool, CID).is_open
    with pytest.raises(ContainerNotFound):
        backend.open_container(pool, ContainerId.from_bytes(b"other"))


def test_concurrent_container_creation_single_winner():
    b = MemoryBackend()
    pool = b.create_pool()
    n = 32
    barrier = threading.Barrier(n)
    outcomes, handles = [], []
    lock = threading.Lock()

    def worker():
        barrier.wait()
        try:
            h = b.create_container(pool, CID)
            won = True
        except AlreadyExists:
            h = b.open_container(pool, CID)
            won = False
        with lock:
            outcomes.append(won)
            handles.append(h)

    threads = [threading.Thread(target=worker) for _ in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert outcomes.count(True) == 1
    assert {h.container_id for h in handles} == {CID}
    assert b.list_containers(pool) == [CID]


# key-values


def test_kv_read_your_write(backend):
    pool = backend.create_pool()
    c = backend.create_container(pool, CID)
    kv = ObjectId(0, ObjectClass.SX)
    assert backend.kv_get(c, kv, b"date=20201224") is None
    backend.kv_put(c, kv, b"date=20201224", b"ref")
    assert backend.kv_get(c, kv, b"date=20201224") == b"ref"
    backend.kv_put(c, kv, b"date=20201224", b"ref2")
    assert backend.kv_get(c, kv, b"date=20201224") == b"ref2"


def test_kv_concurrent_distinct_keys():
    b = MemoryBackend()
    c = b.create_container(b.create_pool(), CID)
    kv = ObjectId(0, ObjectClass.SX)
    n = 48
    barrier = threading.Barrier(n)

    def put(i):
        barrier.wait()
        b.kv_put(c, kv, f"k{i}".encode(), f"v{i}".encode() * 100)

    threads = [threading.Thread(target=put, args=(i,)) for i in range(n)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(b.kv_get(c, kv, f"k{i}".encode()) == f"v{i}".encode() * 100 for i in range(n))


def test_kv_same_key_atomicity():
    b = MemoryBackend()
    c = b.create_container(b.create_pool(), CID)
    kv = ObjectId(0, ObjectClass.SX)
    values = [bytes([i]) * 4096 for i in range(8)]
    seen = set()
    stop = threading.Event()

    def writer(v):
        for _ in range(200):
            b.kv_put(c, kv, b"k", v)

    def reader():
        while not stop.is_set():
            got = b.kv_get(c, kv, b"k")
            if got is not None:
                seen.add(got)

    r = threading.Thread(target=reader)
    r.start()
    ws = [threading.Thread(target=writer, args=(v,)) for v in values]
    for t in ws:
        t.start()
    for t in ws:
        t.join()
    stop.set()
    r.join()
    assert seen <= set(values)
    assert b.kv_get(c, kv, b"k") in values


# arrays


def test_array_create_and_stripes(backend):
    pool = backend.create_pool()
    c = backend.create_container(pool, CID)
    assert backend.array_create(c, ObjectId(1, ObjectClass.S1)).stripe_count == 1
    assert backend.array_create(c, ObjectId(2, ObjectClass.SX)).stripe_count == 24
    with pytest.raises(AlreadyExists):
        backend.array_create(c, ObjectId(1, ObjectClass.S1))
    with pytest.raises(ObjectNotFound):
        backend.array_open(c, ObjectId(3, ObjectClass.S1))


def test_array_write_read_bounds(backend):
    pool = backend.create_pool()
    c = backend.create_container(pool, CID)
    arr = backend.array_create(c, ObjectId(1, ObjectClass.S1))
    data = bytes(range(256)) * 4096
    backend.array_write(arr, 0, data)
    assert arr.length == MiB
    backend.array_write(arr, 0, b"")
    assert arr.length == MiB
    assert backend.array_read(arr, 0, MiB) == data
    with pytest.raises(OutOfBounds):
        backend.array_read(arr, 1, MiB)
    backend.array_close(arr)
    with pytest.raises(ClosedHandle):
        backend.array_read(arr, 0, 1)


def test_unwritten_gaps_read_as_zero(backend):
    c = backend.create_container(backend.create_pool(), CID)
    arr = backend.array_create(c, ObjectId(1, ObjectClass.S1))
    backend.array_write(arr, 10, b"xy")
    assert backend.array_read(arr, 0, 12) == b"\0" * 10 + b"xy"


@settings(max_examples=40, deadline=None)
@given(writes=st.lists(st.tuples(st.integers(0, 5000), st.binary(min_size=0, max_size=700)), max_size=12),
       cls=st.sampled_from(list(ObjectClass)))
def test_backends_agree_on_any_write_sequence(writes, cls):
    """Sequential programs read identically on memory and simulated backends, and match a bytearray model."""
    results = []
    topo = SimTopology(cell_size=64)
    for b in (MemoryBackend(topo), SimBackend(topo, VirtualRuntime())):
        c = b.create_container(b.create_pool(), CID)
        arr = b.array_create(c, ObjectId(7, cls))
        for off, data in writes:
            b.array_write(arr, off, data)
        results.append(b.array_read(arr, 0, arr.length))
    model = bytearray()
    for off, data in writes:
        if data:
            if len(model) < off + len(data):
                model.extend(b"\0" * (off + len(data) - len(model)))
            model[off:off + len(data)] = data
    assert results[0] == results[1] == bytes(model)


def test_s2_write_spreads_over_two_targets():
    b = SimBackend(SimTopology(), VirtualRuntime())
    c = b.create_container(b.create_pool(), CID)
    arr = b.array_create(c, ObjectId(5, ObjectClass.S2))
    b.array_write(arr, 0, b"\1" * (50 * MiB))
    dist = b.stripe_distribution(arr)
    assert len(dist) == 2
    assert sum(dist.values()) == 50 * MiB
    assert sorted(dist.values()) == [25 * MiB, 25 * MiB]


@given(offset=st.integers(0, 10 * MiB), length=st.integers(0, 10 * MiB), start=st.integers(0, 23),
       stripes=st.integers(1, 24))
def test_stripe_layout_conserves_bytes(offset, length, start, stripes):
    layout = stripe_layout(ObjectId(1), start, stripes, 24, offset, length, MiB)
    assert sum(layout.values()) == length
    assert len(layout) <= stripes


# timing model


def test_sim_transfer_time_fixture():
    topo = SimTopology(per_op_latency=1e-3, per_target_bandwidth=100 * MiB, per_interface_bandwidth=float("inf"))
    assert sim_transfer_time(topo, MiB, 1, 1) == pytest.approx(0.011, rel=1e-12)
    assert sim_transfer_time(topo, 0, 1, 1) == 1e-3


def test_sim_transfer_time_stripes_halve_transfer_term():
    topo = SimTopology(per_op_latency=1e-3, per_target_bandwidth=100 * MiB, per_interface_bandwidth=10_000 * MiB)
    one = sim_transfer_time(topo, 10 * MiB, 1, 1) - 1e-3
    two = sim_transfer_time(topo, 10 * MiB, 2, 1) - 1e-3
    assert two == pytest.approx(one / 2, rel=1e-12)


def test_single_transfer_timing_matches_closed_form():
    topo = SimTopology(per_op_latency=1e-3, per_target_bandwidth=100 * MiB, per_interface_bandwidth=float("inf"),
                       client_interface_bandwidth=float("inf"))
    rt = VirtualRuntime()
    b = SimBackend(topo, rt)
    c = b.create_container(b.create_pool(), CID)
    arr = b.array_create(c, ObjectId(9, ObjectClass.S1))
    t0 = rt.now_ns()
    b.array_write(arr, 0, b"\0" * MiB)
    assert (rt.now_ns() - t0) / 1e9 == pytest.approx(sim_transfer_time(topo, MiB, 1, 1), rel=1e-9)


def test_file_backend_persists_to_disk(tmp_path):
    b = FileBackend(tmp_path)
    c = b.create_container(b.create_pool(), CID)
    arr = b.array_create(c, ObjectId(1))
    b.array_write(arr, 0, b"hello")
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and files[0].read_bytes() == b"hello"
