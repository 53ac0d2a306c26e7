"""Append-only results store.

One self-contained JSON record per line, schema version embedded per line,
appends serialized through an advisory file lock so concurrent audit
workers never interleave partial lines.  Raw subprocess streams live in a
content-addressed blob directory next to the log and are referenced by
hash, keeping the line log small while preserving the evidence.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .metrics import SCHEMA_VERSION, AuditRecord

logger = logging.getLogger(__name__)


class StoreError(Exception):
    pass


class SerializationError(StoreError):
    pass


class StorageError(StoreError):
    pass


class SchemaVersionMismatch(StoreError):
    pass


@dataclass(frozen=True)
class ResultsStore:
    path: Path
    schema_version: int = SCHEMA_VERSION

    @property
    def lock_path(self) -> Path:
        return self.path.with_suffix(self.path.suffix + ".lock")


def append_record(store: ResultsStore, record: AuditRecord) -> None:
    """Serialize and append one record as a single atomic line."""
    try:
        record.validate()
        line = json.dumps(record.to_json(), ensure_ascii=False, sort_keys=True)
    except (ValueError, TypeError) as exc:
        raise SerializationError(f"record rejected: {exc}") from exc
    data = (line + "\n").encode("utf-8")
    try:
        store.path.parent.mkdir(parents=True, exist_ok=True)
        with open(store.lock_path, "a+b") as lock:
            fcntl.flock(lock, fcntl.LOCK_EX)
            try:
                fd = os.open(store.path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
                try:
                    os.write(fd, data)
                finally:
                    os.close(fd)
            finally:
                fcntl.flock(lock, fcntl.LOCK_UN)
    except OSError as exc:
        raise StorageError(f"cannot append to {store.path}: {exc}") from exc


def load_records(
    store: ResultsStore,
    filters: dict[str, Any] | None = None,
    on_corrupt: Callable[[int, str], None] | None = None,
) -> list[AuditRecord]:
    """Load records matching the filters (agent, language, outcome).

    Corrupt lines are never silently skipped: each is reported with its
    line number through ``on_corrupt`` (default: a logged warning).
    """
    if not store.path.exists():
        return []
    if on_corrupt is None:
        def on_corrupt(line_no: int, reason: str) -> None:
            logger.warning("corrupt record at %s:%d: %s", store.path, line_no, reason)

    filters = filters or {}
    records: list[AuditRecord] = []
    with open(store.path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                version = doc.get("schema_version", 0)
                if version > store.schema_version:
                    raise SchemaVersionMismatch(
                        f"record schema v{version} is newer than supported v{store.schema_version}"
                    )
                record = AuditRecord.from_json(doc)
            except SchemaVersionMismatch:
                raise
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                on_corrupt(line_no, str(exc))
                continue
            if all(getattr(record, key) == value for key, value in filters.items()):
                records.append(record)
    return records


def recorded_keys(store: ResultsStore) -> set[tuple[str, str]]:
    """(agent, prompt_id) pairs already present; batch resumability check."""
    return {(r.agent, r.prompt_id) for r in load_records(store)}


class BlobStore:
    """Content-addressed bytes under ``<dir>/<sha256>``."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def put(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.directory / digest
        if not path.exists():
            self.directory.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return digest

    def get(self, digest: str) -> bytes:
        return (self.directory / digest).read_bytes()

    def __contains__(self, digest: str) -> bool:
        return (self.directory / digest).exists()
