"""On-disk formats: dataset and checkpoint JSON, CSV metrics, run manifests.

All JSON documents store floats through ``json``'s shortest round-trip
representation, so a write followed by a read is lossless and two writes of
the same object are byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import DatasetConfig, SyntheticDataset
from .errors import FormatError
from .ghdm import GeneratorParams, GHDMConfig, _param_shapes

CHECKPOINT_VERSION = 1


def _dump(obj, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, separators=(",", ":"), sort_keys=True, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc


def _load(path) -> dict:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: expected a JSON object at top level")
    return obj


def _require(obj: dict, keys, what: str) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise FormatError(f"{what} is missing keys {missing}")


# datasets

def write_dataset(dataset: SyntheticDataset, path) -> None:
    _dump({
        "dim": int(dataset.dim),
        "kappa": float(dataset.kappa),
        "points": dataset.points.tolist(),
        "labels": dataset.labels.astype(int).tolist(),
        "tree": dataset.tree.astype(int).tolist(),
        "class_nodes": dataset.class_nodes.astype(int).tolist(),
        "config": dataset.config.to_dict(),
    }, path)


def read_dataset(path) -> SyntheticDataset:
    obj = _load(path)
    _require(obj, ("dim", "kappa", "points", "labels", "tree", "config"), "dataset file")
    try:
        points = np.asarray(obj["points"], dtype=np.float64)
        labels = np.asarray(obj["labels"], dtype=np.int64)
        tree = np.asarray(obj["tree"], dtype=np.int64)
        class_nodes = np.asarray(obj.get("class_nodes", []), dtype=np.int64)
        config = DatasetConfig(**obj["config"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"malformed dataset file {path}: {exc}") from exc
    if points.ndim != 2 or points.shape[1] != obj["dim"]:
        raise FormatError(f"points must be (m, {obj['dim']}), got shape {points.shape}")
    if labels.shape != (len(points),):
        raise FormatError("need exactly one label per point")
    if not np.all(np.isfinite(points)):
        raise FormatError("dataset contains non-finite coordinates")
    if float(obj["kappa"]) != config.kappa:
        raise FormatError("kappa disagrees with the embedded config")
    return SyntheticDataset(points, labels, tree, class_nodes, config)


# checkpoints

def write_checkpoint(params: GeneratorParams, path, train_config: dict | None = None) -> None:
    tensors = {
        name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        for name, arr in params.arrays().items()
    }
    _dump({
        "format_version": CHECKPOINT_VERSION,
        "config": {"ghdm": params.config.to_dict(), "train": train_config or {}},
        "params": tensors,
    }, path)


def read_checkpoint(path) -> tuple[GeneratorParams, dict]:
    """Return the generator parameters and the stored training config dict."""
    obj = _load(path)
    _require(obj, ("format_version", "config", "params"), "checkpoint")
    if obj["format_version"] != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint format_version {obj['format_version']!r}, "
                          f"expected {CHECKPOINT_VERSION}")
    _require(obj["config"], ("ghdm",), "checkpoint config")
    try:
        config = GHDMConfig(**obj["config"]["ghdm"])
    except TypeError as exc:
        raise FormatError(f"bad generator config in checkpoint: {exc}") from exc
    expected = _param_shapes(config)
    stored = obj["params"]
    if set(stored) != set(expected):
        raise FormatError(f"checkpoint parameter names {sorted(stored)} do not match "
                          f"the config's {sorted(expected)}")
    arrays = {}
    for name, shape in expected.items():
        entry = stored[name]
        if tuple(entry["shape"]) != shape:
            raise FormatError(f"{name}: stored shape {entry['shape']} != expected {list(shape)}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise FormatError(f"{name}: {data.size} values for shape {list(shape)}")
        arrays[name] = data.reshape(shape)
    return GeneratorParams.from_arrays(config, arrays), obj["config"].get("train", {})


def check_compatible(params: GeneratorParams, dataset: SyntheticDataset) -> None:
    cfg = params.config
    if cfg.dim != dataset.dim:
        raise FormatError(f"checkpoint expects dim {cfg.dim}, dataset has dim {dataset.dim}")
    if cfg.base_kappa != dataset.kappa:
        raise FormatError(f"checkpoint base curvature {cfg.base_kappa} != dataset kappa {dataset.kappa}")


# csv

def cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with a header row; floats written with full precision."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for row in rows:
                w.writerow([cell(v) for v in row])
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror}") from exc


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path} is empty")
    return rows[0], rows[1:]


# manifests

@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    timings: dict = field(default_factory=dict)
    version: str = __version__
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "timings": self.timings,
            "outputs": self.outputs,
        }


def manifest_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def write_manifest(manifest: RunManifest, output) -> Path:
    path = manifest_path(output)
    manifest.outputs = sorted({*manifest.outputs, os.fspath(output)})
    _dump(manifest.to_dict(), path)
    return path
