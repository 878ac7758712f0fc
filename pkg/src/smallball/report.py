"""Output files and run manifests.

Every subcommand writes its files flat into one directory, with names
prefixed by the subcommand, and finishes with ``<command>_manifest.json``
listing each file with its SHA-256 digest.  Data files never contain
timestamps, so identical inputs reproduce identical digests; only the
manifest records wall-clock times.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

__all__ = ["OutputWriter", "RunManifest", "dumps_json", "sha256_bytes"]


def _clean(obj):
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        return _clean(obj.item())
    return obj


def dumps_json(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str
    seed: int
    started: str
    finished: str = ""
    status: str = "ok"
    files: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


class OutputWriter:
    """Collects the files of one subcommand run and writes the manifest."""

    def __init__(self, directory, command: str, config_hash: str, seed: int, version: str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command, config_hash, version, int(seed), _now())
        self.paths: list[Path] = []

    def _write(self, name: str, text: str) -> Path:
        data = text.encode("utf-8")
        path = self.dir / name
        path.write_bytes(data)
        self.manifest.files.append({"name": name, "sha256": sha256_bytes(data), "bytes": len(data)})
        self.paths.append(path)
        return path

    def json(self, name: str, obj: Any) -> Path:
        return self._write(name, dumps_json(obj))

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        return self._write(name, _csv_text(header, rows))

    def text(self, name: str, text: str) -> Path:
        return self._write(name, text)

    def finish(self, status: str = "ok") -> Path:
        self.manifest.finished = _now()
        self.manifest.status = status
        path = self.dir / f"{self.manifest.command}_manifest.json"
        path.write_text(dumps_json(self.manifest.to_dict()))
        self.paths.append(path)
        return path
