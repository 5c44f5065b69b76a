"""Experiment manifests, result records and the content-addressed store."""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..model import ModelSpec, load_model, model_from_dict, model_to_dict
from .models import builtin

DEFAULT_STORE = "lab-results"


class StaleModelError(ValueError):
    """The model content no longer matches the hash recorded with it."""


class StoreConflictError(RuntimeError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def resolve_model(ref: str) -> ModelSpec:
    """``builtin:<name>`` or a path to a model JSON file."""
    if ref.startswith("builtin:"):
        return builtin(ref.split(":", 1)[1])
    return load_model(ref)


@dataclass(frozen=True)
class ExperimentManifest:
    op: str
    model_ref: str
    model: dict
    model_hash: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    version: str = __version__

    @classmethod
    def create(cls, op: str, model_ref: str, params: dict | None = None, seed: int = 0,
               spec: ModelSpec | None = None) -> "ExperimentManifest":
        spec = spec or resolve_model(model_ref)
        return cls(op, model_ref, model_to_dict(spec), spec.fingerprint(), dict(params or {}), int(seed))

    def spec(self) -> ModelSpec:
        spec = model_from_dict(self.model)
        if spec.fingerprint() != self.model_hash:
            raise StaleModelError(
                f"model content hash {spec.fingerprint()[:12]} does not match recorded {self.model_hash[:12]}"
            )
        return spec

    def to_dict(self) -> dict:
        return {"op": self.op, "model_ref": self.model_ref, "model": self.model, "model_hash": self.model_hash,
                "params": self.params, "seed": self.seed, "version": self.version}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentManifest":
        return cls(d["op"], d["model_ref"], d["model"], d["model_hash"], d.get("params", {}),
                   int(d.get("seed", 0)), d.get("version", __version__))

    @property
    def hash(self) -> str:
        return sha256(canonical_json(self.to_dict()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class ResultRecord:
    manifest_hash: str
    op: str
    estimates: dict = field(default_factory=dict)  # name -> {"value", "se"}
    tables: dict = field(default_factory=dict)  # name -> CSV text
    checks: dict = field(default_factory=dict)  # name -> bool
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"manifest_hash": self.manifest_hash, "op": self.op, "estimates": self.estimates,
                "tables": self.tables, "checks": self.checks, "data": self.data}

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(d["manifest_hash"], d["op"], d.get("estimates", {}), d.get("tables", {}),
                   d.get("checks", {}), d.get("data", {}))

    @property
    def hash(self) -> str:
        return sha256(canonical_json(self.to_dict()))

    def summary(self) -> dict:
        """Everything except the CSV payloads."""
        d = self.to_dict()
        d["tables"] = sorted(self.tables)
        d["record_hash"] = self.hash
        return d


def store_root(override=None) -> Path:
    return Path(override or os.environ.get("LAB_RESULT_DIR") or DEFAULT_STORE)


class ResultStore:
    """Append-only store keyed by manifest hash.

    Each entry is a directory holding ``manifest.json``, ``record.json`` and
    one CSV per table. Entries are written to a temporary directory and
    renamed into place, so readers never see a partial entry.
    """

    def __init__(self, root=None):
        self.root = store_root(root)

    def path(self, manifest_hash: str) -> Path:
        return self.root / manifest_hash[:2] / manifest_hash

    def put(self, manifest: ExperimentManifest, record: ResultRecord) -> Path:
        if record.manifest_hash != manifest.hash:
            raise ValueError("record does not belong to this manifest")
        final = self.path(manifest.hash)
        if final.exists():
            existing = self.get(manifest.hash)
            if existing.hash != record.hash:
                raise StoreConflictError(f"store already holds a different record for {manifest.hash[:12]}")
            return final
        final.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=final.parent))
        try:
            write_outputs(tmp, manifest, record)
            try:
                os.rename(tmp, final)
            except OSError:
                if not final.exists():
                    raise
                shutil.rmtree(tmp)  # lost a race against an identical writer
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        return final

    def get(self, manifest_hash: str) -> ResultRecord:
        path = self.path(manifest_hash) / "record.json"
        return ResultRecord.from_dict(json.loads(path.read_text()))

    def __contains__(self, manifest_hash: str) -> bool:
        return (self.path(manifest_hash) / "record.json").exists()


def write_outputs(directory, manifest: ExperimentManifest, record: ResultRecord) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest.save(directory / "manifest.json")
    (directory / "record.json").write_text(canonical_json(record.to_dict()) + "\n")
    for name, text in record.tables.items():
        (directory / f"{name}.csv").write_text(text)
