"""Simulated distributed backend.

Storage semantics are inherited unchanged from ``MemoryBackend``; every
operation additionally charges modelled time to the calling worker through a
``Runtime``. Metadata operations cost one ``per_op_latency``. Array transfers
cost one latency plus a fluid transfer across the targets, engine interfaces
and the client interface they touch.
"""

from __future__ import annotations

import math

from ..runtime import Runtime, VirtualRuntime
from .memory import MemoryBackend
from .model import ArrayHandle, ContainerHandle, ContainerId, ObjectId, PoolHandle, SimTopology


def sim_transfer_time(topology: SimTopology, size: int, stripe_count: int, concurrent_streams: int,
                      direction: str = "write") -> float:
    """Closed-form duration of one transfer sharing an interface.

    latency + size / min(stripe_count * target_bw, interface_bw / concurrent_streams)
    """
    if size < 0 or stripe_count < 1 or concurrent_streams < 1:
        raise ValueError("size must be >= 0, stripe_count and concurrent_streams >= 1")
    if size == 0:
        return topology.per_op_latency
    rate = min(stripe_count * topology.target_bandwidth(direction),
               topology.per_interface_bandwidth / concurrent_streams)
    return topology.per_op_latency + size / rate


def _weight(fraction: float, capacity: float) -> float:
    return 0.0 if capacity == math.inf else fraction / capacity


class SimBackend(MemoryBackend):
    def __init__(self, topology: SimTopology | None = None, runtime: Runtime | None = None):
        super().__init__(topology or SimTopology())
        self.runtime = runtime or VirtualRuntime()

    def _latency(self):
        self.runtime.sleep(self.topology.per_op_latency)

    def transfer_weights(self, arr: ArrayHandle, offset: int, length: int, direction: str) -> dict:
        """Per-resource usage weights of one transfer (capacity normalised to 1)."""
        topo = self.topology
        layout = self.stripe_distribution(arr, offset, length)
        weights: dict = {}
        target_bw = topo.target_bandwidth(direction)
        engines: dict[int, int] = {}
        for target in sorted(layout):
            nbytes = layout[target]
            weights[("target", target)] = _weight(nbytes / length, target_bw)
            engine = target // topo.targets_per_engine
            engines[engine] = engines.get(engine, 0) + nbytes
        for engine in sorted(engines):
            weights[("engine", engine)] = _weight(engines[engine] / length, topo.per_interface_bandwidth)
        ctx = self.runtime.current()
        node, iface = (ctx.node, ctx.process % topo.client_interfaces_per_node) if ctx else (-1, 0)
        weights[("client", node, iface)] = _weight(1.0, topo.client_interface_bandwidth)
        return weights

    def _transfer(self, arr: ArrayHandle, offset: int, length: int, direction: str):
        self._latency()
        if length > 0:
            self.runtime.transfer(length, self.transfer_weights(arr, offset, length, direction))

    def create_pool(self, topology: SimTopology | None = None, pool_id: str | None = None) -> PoolHandle:
        if topology is not None and topology != self.topology:
            self.topology = topology
        return super().create_pool(self.topology, pool_id)

    def create_container(self, pool: PoolHandle, cid: ContainerId) -> ContainerHandle:
        try:
            return super().create_container(pool, cid)
        finally:
            self._latency()

    def open_container(self, pool: PoolHandle, cid: ContainerId) -> ContainerHandle:
        try:
            return super().open_container(pool, cid)
        finally:
            self._latency()

    def kv_open(self, cont, oid):
        result = super().kv_open(cont, oid)
        self._latency()
        return result

    def kv_put(self, cont, oid, key, value):
        super().kv_put(cont, oid, key, value)
        self._latency()

    def kv_get(self, cont, oid, key):
        value = super().kv_get(cont, oid, key)
        self._latency()
        return value

    def array_create(self, cont: ContainerHandle, oid: ObjectId) -> ArrayHandle:
        try:
            return super().array_create(cont, oid)
        finally:
            self._latency()

    def array_open(self, cont: ContainerHandle, oid: ObjectId) -> ArrayHandle:
        try:
            return super().array_open(cont, oid)
        finally:
            self._latency()

    def array_close(self, arr: ArrayHandle):
        super().array_close(arr)
        self._latency()

    def array_write(self, arr: ArrayHandle, offset: int, data: bytes):
        super().array_write(arr, offset, data)
        self._transfer(arr, offset, len(data), "write")

    def array_read(self, arr: ArrayHandle, offset: int, length: int) -> bytes:
        data = super().array_read(arr, offset, length)
        self._transfer(arr, offset, length, "read")
        return data

    def array_set_size(self, arr: ArrayHandle, size: int):
        super().array_set_size(arr, size)
        self._latency()
