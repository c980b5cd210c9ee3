"""Small persistence and hashing helpers."""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path
from typing import Any, Iterator

DEFAULT_DIGEST = "sha256"


def canonical_json(obj: Any, indent: int | None = 2) -> str:
    return json.dumps(obj, sort_keys=True, indent=indent, ensure_ascii=False)


def digest_bytes(data: bytes, algorithm: str = DEFAULT_DIGEST) -> str:
    return hashlib.new(algorithm, data).hexdigest()


def digest_file(path: str | os.PathLike, algorithm: str = DEFAULT_DIGEST) -> str:
    h = hashlib.new(algorithm)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def walk_files(root: str | os.PathLike) -> Iterator[tuple[str, Path]]:
    """Yield ``(posix relative path, absolute path)`` for every file, sorted."""
    root = Path(root)
    out = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in filenames:
            p = Path(dirpath) / name
            out.append((p.relative_to(root).as_posix(), p))
    out.sort()
    yield from out


def tree_digests(root: str | os.PathLike) -> dict[str, str]:
    return {rel: digest_file(p) for rel, p in walk_files(root)}


def tree_digest(root: str | os.PathLike) -> str:
    """Single digest over a directory: relative paths, modes' exec bit and contents."""
    h = hashlib.sha256()
    for rel, p in walk_files(root):
        h.update(rel.encode())
        h.update(b"\0x" if os.access(p, os.X_OK) else b"\0-")
        h.update(digest_file(p).encode())
        h.update(b"\n")
    return h.hexdigest()


def atomic_write_bytes(path: str | os.PathLike, data: bytes, durable: bool = True) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        if durable:
            fh.flush()
            os.fsync(fh.fileno())
    os.replace(tmp, path)


def atomic_write_text(path: str | os.PathLike, text: str, durable: bool = True) -> None:
    atomic_write_bytes(path, text.encode("utf-8"), durable)


def atomic_write_json(path: str | os.PathLike, obj: Any) -> None:
    atomic_write_text(path, canonical_json(obj) + "\n")


def read_json(path: str | os.PathLike, default: Any = None) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return default


class JsonlLog:
    """Append-only JSON-lines journal; one record per line, flushed per append."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()

    def read(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError:
                    # torn final write after a crash
                    break
        return out


class Sequence:
    """Monotonic counter producing zero-padded, lexicographically sortable ids."""

    def __init__(self, prefix: str, start: int = 0, width: int = 6):
        self.prefix = prefix
        self.value = start
        self.width = width
        self._lock = threading.Lock()

    def next(self) -> str:
        with self._lock:
            self.value += 1
            return f"{self.prefix}{self.value:0{self.width}d}"

    def observe(self, ident: str) -> None:
        """Advance past an id loaded from disk."""
        if ident.startswith(self.prefix):
            tail = ident[len(self.prefix):]
            if tail.isdigit():
                self.value = max(self.value, int(tail))


class LogicalClock:
    """Integer tick clock. All timestamps in wfhub are logical ticks."""

    def __init__(self, start: int = 0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> int:
        return self._now

    def set(self, value: int) -> int:
        with self._lock:
            if value > self._now:
                self._now = value
            return self._now

    def advance(self, delta: int = 1) -> int:
        if delta < 0:
            raise ValueError("delta must be non-negative")
        with self._lock:
            self._now += delta
            return self._now
