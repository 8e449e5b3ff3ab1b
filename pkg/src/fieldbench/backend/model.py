"""Identifiers, handles and topology shared by all backends."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum

from ..errors import ClosedHandle, ConfigError

MiB = 1 << 20
GiB = 1 << 30

USER_BITS = 96
_USER_MASK = (1 << USER_BITS) - 1


class ObjectClass(str, Enum):
    """Striping policy of an object."""

    S1 = "S1"
    S2 = "S2"
    SX = "SX"

    @property
    def code(self) -> int:
        return _CLASS_CODES[self]

    def stripe_count(self, target_count: int) -> int:
        if self is ObjectClass.S1:
            return 1
        if self is ObjectClass.S2:
            return min(2, target_count)
        return target_count

    @classmethod
    def parse(cls, name: str) -> "ObjectClass":
        name = name.upper()
        if name.startswith("OC_"):
            name = name[3:]
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown object class {name!r}") from None


_CLASS_CODES = {ObjectClass.S1: 1, ObjectClass.S2: 2, ObjectClass.SX: 3}
_CODE_CLASSES = {v: k for k, v in _CLASS_CODES.items()}


@dataclass(frozen=True, order=True)
class ObjectId:
    """128-bit object identifier.

    The low 96 bits are free for the caller; the object class is encoded in
    the reserved high bits.
    """

    user_bits: int
    object_class: ObjectClass = ObjectClass.S1

    def __post_init__(self):
        if not 0 <= self.user_bits <= _USER_MASK:
            raise ValueError(f"user_bits out of range: {self.user_bits:#x}")

    def encode(self) -> int:
        return (self.object_class.code << USER_BITS) | self.user_bits

    def to_bytes(self) -> bytes:
        return self.encode().to_bytes(16, "big")

    @classmethod
    def decode(cls, value: int) -> "ObjectId":
        if not 0 <= value < (1 << 128):
            raise ValueError("object id must fit in 128 bits")
        code = value >> USER_BITS
        if code not in _CODE_CLASSES:
            raise ValueError(f"bad object class code {code}")
        return cls(value & _USER_MASK, _CODE_CLASSES[code])

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ObjectId":
        if len(raw) != 16:
            raise ValueError("object id must be 16 bytes")
        return cls.decode(int.from_bytes(raw, "big"))

    @classmethod
    def from_digest(cls, data: bytes, object_class: ObjectClass) -> "ObjectId":
        """Id whose user bits are the leading 96 bits of md5(data)."""
        digest = hashlib.md5(data).digest()
        return cls(int.from_bytes(digest[:12], "big"), object_class)

    def placement_hash(self) -> int:
        return int.from_bytes(hashlib.md5(self.to_bytes()).digest()[:8], "big")

    def __str__(self) -> str:
        return f"{self.encode():032x}"


@dataclass(frozen=True, order=True)
class ContainerId:
    raw: bytes

    def __post_init__(self):
        if len(self.raw) != 16:
            raise ValueError("container id must be 16 bytes")

    @classmethod
    def from_bytes(cls, data: bytes) -> "ContainerId":
        return cls(hashlib.md5(data).digest())

    @property
    def hex(self) -> str:
        return self.raw.hex()

    def __str__(self) -> str:
        return self.hex


@dataclass(frozen=True)
class SimTopology:
    """Server-side layout and the rates used by the timing model.

    Bandwidths are bytes/second; ``math.inf`` disables a cap. Target
    bandwidth differs by direction, which is what makes writes saturate at
    the targets while reads keep scaling with client interfaces.
    """

    server_node_count: int = 1
    engines_per_node: int = 2
    targets_per_engine: int = 12
    per_target_bandwidth: float = 256 * MiB
    per_target_read_bandwidth: float = 640 * MiB
    per_op_latency: float = 50e-6
    per_interface_bandwidth: float = 12.5 * GiB
    client_interface_bandwidth: float = 4 * GiB
    client_interfaces_per_node: int = 2
    cell_size: int = MiB

    def __post_init__(self):
        for name in ("server_node_count", "engines_per_node", "targets_per_engine",
                     "client_interfaces_per_node", "cell_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        for name in ("per_target_bandwidth", "per_target_read_bandwidth", "per_op_latency",
                     "per_interface_bandwidth", "client_interface_bandwidth"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and not math.isnan(value)):
                raise ConfigError(name, f"must be strictly positive, got {value!r}")

    @property
    def engine_count(self) -> int:
        return self.server_node_count * self.engines_per_node

    @property
    def target_count(self) -> int:
        return self.engine_count * self.targets_per_engine

    def target_bandwidth(self, direction: str) -> float:
        return self.per_target_read_bandwidth if direction == "read" else self.per_target_bandwidth


@dataclass(frozen=True)
class PoolHandle:
    pool_id: str
    target_count: int
    topology: SimTopology | None = None


@dataclass(eq=False)
class ContainerHandle:
    container_id: ContainerId
    pool: PoolHandle
    is_open: bool = True

    def check_open(self):
        if not self.is_open:
            raise ClosedHandle(f"container {self.container_id} handle is closed")

    def close(self):
        self.is_open = False


@dataclass(eq=False)
class ArrayHandle:
    container: ContainerHandle
    oid: ObjectId
    stripe_count: int
    is_open: bool = True
    _array: object = field(default=None, repr=False)

    @property
    def length(self) -> int:
        return self._array.length

    def check_open(self):
        if not self.is_open:
            raise ClosedHandle(f"array {self.oid} handle is closed")
        self.container.check_open()

    def close(self):
        self.is_open = False
