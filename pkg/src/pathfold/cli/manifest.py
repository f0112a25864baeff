"""Run manifests: everything needed to re-run a command and check its outputs."""
from __future__ import annotations

import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from .io import dumps_json, sha256_file

MANIFEST_NAME = "manifest.json"
ERROR_NAME = "error.json"
OUT_DIR_TOKEN = "<out-dir>"


def versions() -> dict:
    return {"pathfold": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def output_hashes(out_dir: Path) -> dict:
    """sha256 of every file under ``out_dir`` except the manifest and error report."""
    out_dir = Path(out_dir)
    hashes = {}
    for p in sorted(out_dir.rglob("*")):
        rel = p.relative_to(out_dir).as_posix()
        if p.is_file() and rel not in (MANIFEST_NAME, ERROR_NAME):
            hashes[rel] = sha256_file(p)
    return hashes


@dataclass
class RunManifest:
    """Command line (output directory replaced by a token), resolved seed and
    format, input files with their hashes, library versions and the hash of
    every output file."""

    command: list
    seed: int
    format: str
    configs: dict = field(default_factory=dict)
    versions: dict = field(default_factory=versions)
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, "format": self.format,
                "configs": self.configs, "versions": self.versions, "outputs": self.outputs}

    def write(self, out_dir: Path) -> Path:
        self.outputs = output_hashes(out_dir)
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(dumps_json(self.to_dict()), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["command"], int(d["seed"]), d["format"], d.get("configs", {}),
                   d.get("versions", {}), d.get("outputs", {}))

    def argv(self, out_dir) -> list[str]:
        return [str(out_dir) if a == OUT_DIR_TOKEN else a for a in self.command]


def compare_outputs(expected: dict, out_dir: Path) -> dict:
    """Files missing, extra or differing between a manifest and a directory."""
    actual = output_hashes(out_dir)
    return {
        "missing": sorted(set(expected) - set(actual)),
        "extra": sorted(set(actual) - set(expected)),
        "changed": sorted(k for k in set(expected) & set(actual) if expected[k] != actual[k]),
    }
