"""Run manifests: provenance records written before any output artifact."""

from __future__ import annotations

import datetime
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

TOOL_VERSION = "0.1.0"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: Dict[str, object] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    input_hashes: Dict[str, str] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION
    started_at: Optional[str] = None
    wall_clock_s: Optional[float] = None

    def record_inputs(self, paths: Sequence) -> None:
        for p in paths:
            self.input_hashes[str(p)] = sha256_file(p)

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "input_hashes": self.input_hashes,
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "wall_clock_s": self.wall_clock_s,
        }

    def write(self, path) -> None:
        if self.started_at is None:
            self.started_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))
