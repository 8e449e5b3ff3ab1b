"""Storage model (pools, containers, Key-Values, Arrays) and its backends."""

from .files import FileBackend
from .memory import MemoryBackend, stripe_layout
from .model import (
    GiB,
    MiB,
    ArrayHandle,
    ContainerHandle,
    ContainerId,
    ObjectClass,
    ObjectId,
    PoolHandle,
    SimTopology,
)
from .sim import SimBackend, sim_transfer_time


def create_pool(backend, topology=None, pool_id=None) -> PoolHandle:
    return backend.create_pool(topology, pool_id)


__all__ = [
    "ArrayHandle",
    "ContainerHandle",
    "ContainerId",
    "FileBackend",
    "GiB",
    "MemoryBackend",
    "MiB",
    "ObjectClass",
    "ObjectId",
    "PoolHandle",
    "SimBackend",
    "SimTopology",
    "create_pool",
    "sim_transfer_time",
    "stripe_layout",
]
