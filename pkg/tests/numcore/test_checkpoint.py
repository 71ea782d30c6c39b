import json

import numpy as np
import pytest

from sati.errors import ContractError
from sati.numcore.checkpoint import blob_path, load_checkpoint, load_into, save_checkpoint
from sati.numcore.params import ParamRegistry


def _registry(seed: int) -> ParamRegistry:
    registry = ParamRegistry(seed=seed)
    registry.glorot("enc.W", 3, 4)
    registry.zeros("enc.b", 4)
    registry.constant("scalar", np.array(2.5))
    return registry


def test_round_trip_is_bit_exact(tmp_path):
    source = _registry(1)
    source["enc.b"].data = np.array([1e-300, -0.0, np.pi, 1.0 / 3.0])
    path = save_checkpoint(tmp_path / "model.json", source, {"epoch": 3})

    target = _registry(2)
    metadata = load_into(path, target)

    assert metadata == {"epoch": 3}
    for name, tensor in source.items():
        assert target[name].data.tobytes() == tensor.data.tobytes()


def test_manifest_lists_tensors_in_registry_order(tmp_path):
    path = save_checkpoint(tmp_path / "model.json", _registry(0))
    manifest = json.loads(path.read_text())

    assert manifest["dtype"] == "<f8"
    assert [entry["name"] for entry in manifest["tensors"]] == ["enc.W", "enc.b", "scalar"]
    assert [entry["byte_offset"] for entry in manifest["tensors"]] == [0, 96, 128]
    assert blob_path(path).stat().st_size == 136


def test_truncated_blob_is_rejected(tmp_path):
    path = save_checkpoint(tmp_path / "model.json", _registry(0))
    blob = blob_path(path)
    blob.write_bytes(blob.read_bytes()[:100])

    with pytest.raises(ContractError, match="truncated"):
        load_checkpoint(path)


def test_garbage_manifest_is_rejected(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("not json")

    with pytest.raises(ContractError):
        load_checkpoint(path)


def test_manifest_named_like_a_blob_keeps_its_tensors(tmp_path):
    source = _registry(4)
    path = save_checkpoint(tmp_path / "model.bin", source)

    arrays, _ = load_checkpoint(path)

    assert blob_path(path).name == "model.bin.blob"
    assert json.loads(path.read_text())["blob"] == "model.bin.blob"
    for name, tensor in source.items():
        assert arrays[name].tobytes() == tensor.data.tobytes()


def test_manifest_pointing_at_itself_is_rejected(tmp_path):
    path = save_checkpoint(tmp_path / "model.json", _registry(0))
    manifest = json.loads(path.read_text())
    manifest["blob"] = path.name
    path.write_text(json.dumps(manifest))

    with pytest.raises(ContractError, match="names itself"):
        load_checkpoint(path)
