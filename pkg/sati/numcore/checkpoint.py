"""Checkpoint I/O: a JSON manifest next to a little-endian float64 blob."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from sati.errors import ContractError
from sati.numcore.params import ParamRegistry
from sati.utils.logging_utils import get_logger

logger = get_logger("sati.numcore.checkpoint")

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def blob_path(manifest_path: Path) -> Path:
    """``model.json`` stores its tensors in ``model.bin``; a manifest already named ``*.bin`` uses ``*.bin.blob``."""

    blob = manifest_path.with_suffix(".bin")
    if blob == manifest_path:
        return manifest_path.with_name(manifest_path.name + ".blob")
    return blob


def save_checkpoint(path: Path | str, registry: ParamRegistry, metadata: Mapping[str, Any] | None = None) -> Path:
    """Write every registered parameter, in registry order, and return the manifest path."""

    manifest_path = Path(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks: list[bytes] = []
    for name, tensor in registry.items():
        raw = np.ascontiguousarray(tensor.data, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "byte_offset": offset})
        chunks.append(raw)
        offset += len(raw)

    blob = blob_path(manifest_path)
    blob.write_bytes(b"".join(chunks))
    manifest = {
        "version": FORMAT_VERSION,
        "blob": blob.name,
        "dtype": "<f8",
        "metadata": dict(metadata or {}),
        "tensors": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=False), encoding="utf-8")
    logger.info(
        "Checkpoint written",
        extra={"context": {"path": str(manifest_path), "tensors": len(entries), "bytes": offset}},
    )
    return manifest_path


def load_checkpoint(path: Path | str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Return ``(arrays by name in manifest order, metadata)``."""

    manifest_path = Path(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ContractError(f"{manifest_path} is not a checkpoint manifest: {exc}") from exc
    if manifest.get("version") != FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint version {manifest.get('version')!r}")

    blob_file = manifest_path.parent / manifest["blob"]
    if blob_file == manifest_path:
        raise ContractError(f"{manifest_path} names itself as its tensor blob")
    blob = blob_file.read_bytes()
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(int(extent) for extent in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["byte_offset"])
        if start + count * _DTYPE.itemsize > len(blob):
            raise ContractError(f"checkpoint blob is truncated at tensor {entry['name']!r}")
        values = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=start)
        arrays[entry["name"]] = values.astype(np.float64).reshape(shape)
    return arrays, manifest.get("metadata", {})


def load_into(path: Path | str, registry: ParamRegistry) -> dict[str, Any]:
    """Restore ``registry`` from a checkpoint and return the stored metadata."""

    arrays, metadata = load_checkpoint(path)
    registry.restore(arrays)
    return metadata
