"""Benchmark configuration: schema, validation and sweep expansion."""

from __future__ import annotations

import dataclasses
import itertools
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from .backend.model import GiB, MiB, ObjectClass, SimTopology
from .errors import ConfigError
from .fieldstore import FieldStoreMode


class Pattern(str, Enum):
    A = "a"
    B = "b"


class Driver(str, Enum):
    FIELDIO = "fieldio"
    IOR = "ior"


class Contention(str, Enum):
    SHARED = "shared"
    PERPROC = "perproc"


class BackendKind(str, Enum):
    MEMORY = "memory"
    SIM = "sim"
    FILE = "file"


# Reference sweep grid; values outside it only trigger a note.
REFERENCE_GRID = {
    "servers": (1, 2, 4, 8, 10, 12, 14, 16),
    "client_ratio": (0.5, 1, 2, 4),
    "procs_per_client": (1, 3, 4, 6, 8, 9, 12, 18, 24, 36, 48, 72, 96),
    "ios": (100, 2000),
    "object_size": tuple(n * MiB for n in (1, 5, 10, 20, 50)),
}

_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([KMG]i?B|B)?\s*$", re.IGNORECASE)
_UNITS = {"b": 1, "kib": 1 << 10, "kb": 1 << 10, "mib": MiB, "mb": MiB, "gib": GiB, "gb": GiB}


def parse_size(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(f"not a size: {value!r}")
    if isinstance(value, (int, float)):
        return int(value)
    m = _SIZE_RE.match(str(value))
    if not m:
        raise ValueError(f"not a size: {value!r}")
    unit = (m.group(2) or "b").lower()
    return int(float(m.group(1)) * _UNITS[unit])


def _parse_rate(value: Any) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "none", "unlimited"):
        return float("inf")
    if isinstance(value, str) and value.strip().endswith("/s"):
        return float(parse_size(value.strip()[:-2]))
    return float(value)


@dataclass(frozen=True)
class BenchmarkConfig:
    pattern: Pattern = Pattern.A
    driver: Driver = Driver.FIELDIO
    mode: FieldStoreMode = FieldStoreMode.FULL
    servers: int = 1
    clients: int = 1
    procs_per_client: int = 1
    ios: int = 1
    object_size: int = MiB
    contention: Contention = Contention.PERPROC
    kv_class: ObjectClass = ObjectClass.SX
    array_class: ObjectClass = ObjectClass.S1
    repetitions: int = 1
    backend: BackendKind = BackendKind.MEMORY
    seed: int = 0
    verify: bool = True
    start_barrier: bool = True
    clock_skew_ns: int = 0
    # simulated topology
    engines_per_node: int = 2
    targets_per_engine: int = 12
    target_bandwidth: float = 256 * MiB
    target_read_bandwidth: float = 640 * MiB
    interface_bandwidth: float = 12.5 * GiB
    client_interface_bandwidth: float = 4 * GiB
    client_interfaces_per_node: int = 2
    op_latency: float = 50e-6
    cell_size: int = MiB

    def __post_init__(self):
        for name in ("servers", "clients", "procs_per_client", "ios", "object_size", "repetitions",
                     "engines_per_node", "targets_per_engine", "client_interfaces_per_node", "cell_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        if self.pattern is Pattern.B:
            if self.driver is Driver.IOR:
                raise ConfigError("driver", "pattern B needs coordinated writers and readers; IOR cannot do it")
            if self.total_procs % 2:
                raise ConfigError("procs_per_client", f"pattern B needs an even process count, got {self.total_procs}")
        self.topology()

    @property
    def total_procs(self) -> int:
        return self.clients * self.procs_per_client

    def topology(self) -> SimTopology:
        return SimTopology(
            server_node_count=self.servers,
            engines_per_node=self.engines_per_node,
            targets_per_engine=self.targets_per_engine,
            per_target_bandwidth=self.target_bandwidth,
            per_target_read_bandwidth=self.target_read_bandwidth,
            per_op_latency=self.op_latency,
            per_interface_bandwidth=self.interface_bandwidth,
            client_interface_bandwidth=self.client_interface_bandwidth,
            client_interfaces_per_node=self.client_interfaces_per_node,
            cell_size=self.cell_size,
        )

    def grid_warnings(self) -> list[str]:
        """Parameters that fall outside the reference sweep grid."""
        notes = []
        for name in ("servers", "procs_per_client", "ios", "object_size"):
            if getattr(self, name) not in REFERENCE_GRID[name]:
                notes.append(f"{name}={getattr(self, name)} outside tested grid")
        if self.clients / self.servers not in REFERENCE_GRID["client_ratio"]:
            notes.append(f"client ratio {self.clients / self.servers:g} outside tested grid")
        return notes

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, float) and value == float("inf"):
                value = "inf"
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for name, value in data.items():
            key = str(name).replace("-", "_")
            if key not in known:
                raise ConfigError(key, "unknown field")
            kwargs[key] = _coerce(key, value)
        return cls(**kwargs)

    def replace(self, **changes) -> "BenchmarkConfig":
        return BenchmarkConfig.from_dict({**self.to_dict(), **changes})


_ENUMS = {
    "pattern": Pattern,
    "driver": Driver,
    "mode": FieldStoreMode,
    "contention": Contention,
    "backend": BackendKind,
}
_RATES = ("target_bandwidth", "target_read_bandwidth", "interface_bandwidth", "client_interface_bandwidth")


def _coerce(name: str, value: Any):
    try:
        if name in _ENUMS:
            return _ENUMS[name](str(value).lower().replace("_", "").replace("-", ""))
        if name in ("kv_class", "array_class"):
            return ObjectClass.parse(str(value))
        if name in ("object_size", "cell_size"):
            return parse_size(value)
        if name in _RATES:
            return _parse_rate(value)
        if name == "op_latency":
            return float(value)
        if name in ("verify", "start_barrier"):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(value, bool):
            raise ValueError("expected an integer")
        if isinstance(value, float) and not value.is_integer():
            raise ValueError("expected an integer")
        return int(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(name, f"invalid value {value!r}: {exc}") from None


def load_document(path: str | Path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    return doc


def expand_sweep(doc: dict) -> list[BenchmarkConfig]:
    """Cartesian product over every list-valued field, in document order."""
    axes = [(k, v if isinstance(v, list) else [v]) for k, v in doc.items()]
    if any(not values for _, values in axes):
        empty = next(k for k, values in axes if not values)
        raise ConfigError(empty, "sweep axis is empty")
    names = [k for k, _ in axes]
    return [BenchmarkConfig.from_dict(dict(zip(names, combo)))
            for combo in itertools.product(*(values for _, values in axes))]


@dataclass(frozen=True)
class RunManifest:
    config: BenchmarkConfig
    repetition: int = 0

    @property
    def seed(self) -> int:
        return self.config.seed + self.repetition

    @property
    def backend(self) -> str:
        return self.config.backend.value

    @property
    def stem(self) -> str:
        c = self.config
        mode = c.mode.value if c.driver is Driver.FIELDIO else "segments"
        return (f"{c.pattern.value}_{c.driver.value}_{mode}_s{c.servers}_c{c.clients}"
                f"_p{c.procs_per_client}_rep{self.repetition:02d}")
