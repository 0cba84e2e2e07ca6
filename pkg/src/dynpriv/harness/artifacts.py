"""Artifact writing with a content-hash manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable

from ..protocols import Trajectory, metadata_path, write_trajectory_csv

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _compute_hash(path: Path) -> str:
    """Compute SHA-256 hash of a file."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(8192), b""):
            h.update(chunk)
    return h.hexdigest()


def _cell(value: Any) -> str:
    if isinstance(value, bool) or value is None:
        return "" if value is None else str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _jsonable(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and value != value:
        return None
    return value


class ArtifactWriter:
    """Writes files under one directory and records every one in the manifest.

    Not thread safe; the runner funnels all writes through one instance.
    """

    def __init__(self, root: Path) -> None:
        self.root = root
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        target = self.root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def record(self, rel: str) -> Path:
        if rel not in self.files:
            self.files.append(rel)
        return self.root / rel

    def write_csv(self, rel: str, header: list[str], rows: Iterable[Iterable[Any]]) -> Path:
        target = self.path(rel)
        with open(target, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        return self.record(rel)

    def write_records(self, rel: str, records: list[dict[str, Any]]) -> Path:
        """CSV with one column per key, in first-seen order."""
        header: list[str] = []
        for record in records:
            header.extend(k for k in record if k not in header)
        return self.write_csv(rel, header, ([r.get(k) for k in header] for r in records))

    def write_json(self, rel: str, data: Any) -> Path:
        target = self.path(rel)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(_jsonable(data), f, indent=2, sort_keys=True)
            f.write("\n")
        return self.record(rel)

    def write_trajectory(self, rel: str, traj: Trajectory) -> Path:
        target = self.path(rel)
        write_trajectory_csv(traj, target)
        self.record(str(metadata_path(Path(rel))))
        return self.record(rel)

    def write_manifest(self) -> Path:
        entries = {rel: _compute_hash(self.root / rel) for rel in sorted(self.files)}
        target = self.root / MANIFEST_NAME
        with open(target, "w", encoding="utf-8") as f:
            json.dump({"files": entries}, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info("Wrote %d artifacts to %s", len(entries), self.root)
        return target


def verify_manifest(root: Path) -> list[str]:
    """Paths whose content no longer matches the manifest hash."""
    with open(root / MANIFEST_NAME, encoding="utf-8") as f:
        entries = json.load(f)["files"]
    return [
        rel
        for rel, digest in entries.items()
        if not (root / rel).exists() or _compute_hash(root / rel) != digest
    ]
