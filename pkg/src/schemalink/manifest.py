"""Run manifests: enough provenance to reproduce any command's outputs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_FILE = "manifest.json"


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # path -> sha256
    providers: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    started_at: str = ""
    elapsed_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "providers": self.providers,
            "outputs": self.outputs,
            "started_at": self.started_at,
            "elapsed_seconds": self.elapsed_seconds,
        }


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def file_digest(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(manifest: RunManifest, directory: str | Path) -> Path:
    """Write the manifest next to the command's outputs."""
    path = Path(directory) / MANIFEST_FILE
    path.write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path
