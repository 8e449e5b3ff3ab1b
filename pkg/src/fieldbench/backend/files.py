"""Backend variant that keeps Array payloads in files.

Key-Values and metadata stay in memory; only Array bytes go to disk, which
lets large write-then-read workloads run on hosts with little RAM.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

from .memory import MemoryBackend, _Array
from .model import ContainerHandle, ObjectId, SimTopology


class FileExtents:
    """Same contract as ``Extents``; holes in the sparse file read as zeros."""

    __slots__ = ("path", "length")

    def __init__(self, path: Path):
        self.path = path
        self.length = 0

    def write(self, offset: int, data: bytes):
        if not data:
            return
        fd = os.open(self.path, os.O_WRONLY | os.O_CREAT, 0o600)
        try:
            view = memoryview(data)
            pos = 0
            while pos < len(view):
                pos += os.pwrite(fd, view[pos:], offset + pos)
        finally:
            os.close(fd)
        self.length = max(self.length, offset + len(data))

    def read(self, offset: int, length: int) -> bytes:
        if length == 0:
            return b""
        try:
            fd = os.open(self.path, os.O_RDONLY)
        except FileNotFoundError:
            return bytes(length)
        try:
            parts, pos = [], offset
            while pos < offset + length:
                chunk = os.pread(fd, offset + length - pos, pos)
                if not chunk:
                    break
                parts.append(chunk)
                pos += len(chunk)
        finally:
            os.close(fd)
        data = b"".join(parts)
        return data + bytes(length - len(data))

    def set_size(self, size: int):
        fd = os.open(self.path, os.O_WRONLY | os.O_CREAT, 0o600)
        try:
            os.ftruncate(fd, size)
        finally:
            os.close(fd)
        self.length = size

    @property
    def stored_bytes(self) -> int:
        try:
            return os.stat(self.path).st_blocks * 512
        except FileNotFoundError:
            return 0


class FileBackend(MemoryBackend):
    def __init__(self, directory: str | os.PathLike | None = None, topology: SimTopology | None = None):
        super().__init__(topology)
        if directory is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="fieldbench-")
            directory = self._tmp.name
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _new_array(self, cont: ContainerHandle, oid: ObjectId) -> _Array:
        arr = super()._new_array(cont, oid)
        name = f"{cont.pool.pool_id}-{cont.container_id.hex}-{oid}.bin"
        arr.data = FileExtents(self.directory / name)
        return arr
