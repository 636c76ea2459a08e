"""Checkpoint serialization: JSON manifest, raw float64 blob, vocabulary.

A checkpoint is a directory holding manifest.json (configs plus one entry
per parameter with name, shape, and byte offset), params.bin (little-endian
64-bit floats concatenated in registry order), and vocab.json. Files are
written to temporary names and renamed, so a crash never leaves a partial
checkpoint under the final names. Nothing time- or host-dependent is
stored: identical runs produce byte-identical checkpoints.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .encoding import Vocabulary
from .model import Model, ModelConfig

FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"
VOCAB_NAME = "vocab.json"


class CheckpointError(RuntimeError):
    """Manifest, blob, and model disagree."""


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_checkpoint(directory, model: Model, train_config: dict | None = None,
                    extra: dict | None = None) -> Path:
    """Write the model, its configs, and the vocabulary under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, tensor in model.named_parameters().items():
        blob = np.ascontiguousarray(tensor.values, dtype="<f8").tobytes()
        entries.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "bytes": len(blob)}
        )
        chunks.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "train_config": train_config,
        "extra": extra or {},
        "params": entries,
    }
    _atomic_write(directory / PARAMS_NAME, b"".join(chunks))
    _atomic_write(
        directory / MANIFEST_NAME,
        (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )
    _atomic_write(directory / VOCAB_NAME, (model.vocab.to_json() + "\n").encode("utf-8"))
    return directory


def load_checkpoint(directory) -> tuple[Model, dict]:
    """Rebuild the model from a checkpoint directory; shapes are validated."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {manifest.get('format_version')!r}"
        )
    vocab = Vocabulary.load(directory / VOCAB_NAME)
    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = Model(cfg, vocab, seed=0)
    params = model.named_parameters()
    with open(directory / PARAMS_NAME, "rb") as fh:
        blob = fh.read()
    seen = set()
    for entry in manifest["params"]:
        name = entry["name"]
        if name not in params:
            raise CheckpointError(f"checkpoint parameter {name!r} not in model")
        tensor = params[name]
        shape = tuple(entry["shape"])
        if shape != tensor.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {shape} in checkpoint, "
                f"model expects {tensor.shape}"
            )
        count = int(np.prod(shape)) if shape else 1
        if entry["bytes"] != count * 8:
            raise CheckpointError(f"parameter {name!r} byte count mismatch")
        if entry["offset"] + entry["bytes"] > len(blob):
            raise CheckpointError(
                f"parameter blob is too short for {name!r}: needs "
                f"{entry['offset'] + entry['bytes']} bytes, has {len(blob)}"
            )
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=entry["offset"])
        tensor.values = arr.astype(np.float64).reshape(shape).copy()
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)}")
    return model, manifest
