"""Field I/O benchmarking against an object-store model.

Layers: an object backend (in-memory, file-backed or simulated), a field
store built on it, parallel workload drivers, event telemetry and metrics.
"""

__version__ = "0.1.0"

from .backend import FileBackend, MemoryBackend, ObjectClass, ObjectId, SimBackend, SimTopology  # noqa: E402
from .config import BenchmarkConfig, RunManifest  # noqa: E402
from .fieldstore import FieldKey, FieldStore, FieldStoreMode, census  # noqa: E402
from .metrics import MetricsReport, build_report  # noqa: E402
from .telemetry import Event, EventLog, Phase, WorkerIdentity  # noqa: E402
from .workload import run_benchmark, run_ior_segments, run_pattern_a, run_pattern_b  # noqa: E402

__all__ = [
    "BenchmarkConfig",
    "Event",
    "EventLog",
    "FieldKey",
    "FieldStore",
    "FieldStoreMode",
    "FileBackend",
    "MemoryBackend",
    "MetricsReport",
    "ObjectClass",
    "ObjectId",
    "Phase",
    "RunManifest",
    "SimBackend",
    "SimTopology",
    "WorkerIdentity",
    "build_report",
    "census",
    "run_benchmark",
    "run_ior_segments",
    "run_pattern_a",
    "run_pattern_b",
]
