import hashlib
import struct

import numpy as np
import pytest

from src.errors import CheckpointError, ShapeError, TaskMismatchError, UnknownTaskError
from src.network import (
    MAGIC,
    Checkpoint,
    MultiTaskModel,
    file_digest,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
)


def test_init_is_deterministic_with_zero_heads(trunk, task_specs):
    a = init_model(trunk, task_specs, seed=1)
    b = init_model(trunk, task_specs, seed=1)
    c = init_model(trunk, task_specs, seed=2)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name], b.params[name])
    assert not np.array_equal(a.params["trunk.0.weight"], c.params["trunk.0.weight"])
    assert not a.params["head.cls3.weight"].any()
    assert not a.params["trunk.1.bias"].any()


def test_shapes_and_depths(trunk, task_specs):
    model = init_model(trunk, task_specs, seed=0)
    shapes = model.shapes()
    assert shapes["trunk.0.weight"] == (8, 6)
    assert shapes["trunk.1.weight"] == (6, 6)
    assert shapes["head.cls3.weight"] == (6, 3)
    assert shapes["head.reg.weight"] == (6, 1)
    depths = model.depths()
    assert depths["head.bin.weight"] == 0
    assert depths["trunk.1.weight"] == 1
    assert depths["trunk.0.bias"] == 2


def test_duplicate_tasks_rejected(trunk, task_specs):
    with pytest.raises(ValueError):
        init_model(trunk, task_specs + [task_specs[0]], seed=0)


def test_wrong_parameter_shape_rejected(trunk, task_specs):
    model = init_model(trunk, task_specs, seed=0)
    params = dict(model.params)
    params["head.bin.weight"] = np.zeros((6, 3))
    with pytest.raises(ShapeError):
        MultiTaskModel(trunk, task_specs, params)


def test_forward_outputs(random_model):
    x = np.random.default_rng(0).normal(size=(5, 8))
    probs = random_model.predict(x, "cls3")
    assert probs.shape == (5, 3)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    reg = random_model.predict(x, "reg")
    assert reg.shape == (5,)
    assert np.all((reg > 0) & (reg < 1))
    single = forward(random_model, x[0], "bin")
    assert single.shape == (2,)
    np.testing.assert_allclose(single, random_model.predict(x[:1], "bin")[0])


def test_forward_unknown_task_and_bad_width(random_model):
    with pytest.raises(UnknownTaskError):
        forward(random_model, np.zeros(8), "nope")
    with pytest.raises(ShapeError):
        forward(random_model, np.zeros(7), "bin")


def test_checkpoint_roundtrip_bit_exact(tmp_path, random_model):
    path = tmp_path / "model.ckpt"
    sha = save_checkpoint(Checkpoint(random_model, "abc123", 9), path)
    assert sha == file_digest(path)
    loaded = load_checkpoint(path, expected_tasks=["reg", "bin", "cls3"])
    assert loaded.config_digest == "abc123"
    assert loaded.seed == 9
    assert loaded.model.task_ids == random_model.task_ids
    for name, value in random_model.params.items():
        assert loaded.model.params[name].tobytes() == value.tobytes()
    assert save_checkpoint(loaded, tmp_path / "again.ckpt") == sha


def test_corrupted_checkpoint_rejected(tmp_path, random_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint(random_model), path)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_truncated_checkpoint_rejected(tmp_path, random_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint(random_model), path)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)
    path.write_bytes(MAGIC + b"\x00")
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_unknown_version_rejected(tmp_path, random_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint(random_model), path)
    body = bytearray(path.read_bytes()[:-32])
    struct.pack_into("<I", body, len(MAGIC), 99)
    path.write_bytes(bytes(body) + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_task_mismatch_rejected(tmp_path, random_model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(Checkpoint(random_model), path)
    with pytest.raises(TaskMismatchError):
        load_checkpoint(path, expected_tasks=["cls3", "bin"])
