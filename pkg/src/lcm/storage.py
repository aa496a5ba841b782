"""Untrusted stable storage.

:class:`StableStore` keeps every blob ever written so an adversarial host
can hand out old ones. :class:`FileStore` writes to disk for benchmarks.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .messages import SealedBlobPair


@dataclass(frozen=True)
class StoredVersion:
    version: int
    blobs: SealedBlobPair
    t: int  # context sequence number at store time; introspection only


class StableStore:
    def __init__(self, lineage: int = 0, versions: list[StoredVersion] | None = None):
        self.lineage = lineage
        self.versions: list[StoredVersion] = list(versions or [])
        self._substitute: int | None = None

    def store(self, blobs: SealedBlobPair, t: int = 0) -> int:
        version = len(self.versions)
        self.versions.append(StoredVersion(version, blobs, t))
        return version

    def load(self, version: int | None = None) -> SealedBlobPair | None:
        """The latest blob, or a specific historical version."""
        if version is None:
            version = self.latest
        if version is None:
            return None
        return self.versions[version].blobs

    def next_load(self) -> int | None:
        """Version an unversioned load should return: a pending substitute, else the latest."""
        if self._substitute is not None:
            version, self._substitute = self._substitute, None
            return version
        return self.latest

    @property
    def latest(self) -> int | None:
        return self.versions[-1].version if self.versions else None

    def resolve(self, version: int | None = None, back: int | None = None) -> int | None:
        """Turn an absolute version or a ``back`` offset from the latest into an index."""
        if not self.versions:
            return None
        if back is not None:
            return max(0, self.latest - back)
        if version is None:
            return self.latest
        return min(max(version, 0), self.latest)

    def substitute(self, version: int | None) -> None:
        """Make the next :meth:`next_load` hand out an older version."""
        self._substitute = self.resolve(version)

    def branch(self, lineage: int, version: int | None = None) -> StableStore:
        """Copy of this store's history up to ``version``, for a forked lineage."""
        version = self.resolve(version)
        return StableStore(lineage, self.versions[: version + 1])


class FileStore:
    """Writes the current blob pair to one file, optionally with fsync."""

    def __init__(self, path: str | Path, sync: bool = False):
        self.path = Path(path)
        self.sync = sync
        self.writes = 0

    def store(self, blobs: SealedBlobPair, t: int = 0) -> int:
        data = blobs.to_bytes()
        with open(self.path, "wb") as f:
            f.write(data)
            if self.sync:
                f.flush()
                os.fsync(f.fileno())
        self.writes += 1
        return self.writes

    def load(self) -> SealedBlobPair | None:
        if not self.path.exists():
            return None
        return SealedBlobPair.from_bytes(self.path.read_bytes())
