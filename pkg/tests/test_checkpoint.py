"""Checkpoint file format: byte layout, round trips, model rebuilds."""

import struct

import numpy as np
import pytest

from scenekd import tensor as T
from scenekd.checkpoint import load_checkpoint, save_checkpoint
from scenekd.models import ModelConfig, build_model, model_from_checkpoint, save_model


def test_round_trip_preserves_values_and_shapes(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a.w": rng.standard_normal((3, 2, 5)).astype(np.float32),
        "a.b": rng.standard_normal(7).astype(np.float32),
        "scalar": np.float32(2.5),
    }
    path = tmp_path / "t.dfck"
    save_checkpoint(path, tensors)
    back = load_checkpoint(path)
    assert set(back) == set(tensors)
    for k, v in tensors.items():
        assert back[k].shape == np.asarray(v).shape
        assert np.array_equal(back[k], np.asarray(v, dtype=np.float32))


def test_byte_layout_parsed_by_hand(tmp_path):
    path = tmp_path / "t.dfck"
    save_checkpoint(path, {"x": np.array([1.5, -2.0], np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == b"DFCK"
    version, count = struct.unpack_from("<II", raw, 4)
    assert (version, count) == (1, 1)
    (nlen,) = struct.unpack_from("<H", raw, 12)
    assert raw[14:14 + nlen] == b"x"
    (rank,) = struct.unpack_from("<I", raw, 15)
    assert rank == 1
    (dim,) = struct.unpack_from("<I", raw, 19)
    assert dim == 2
    assert struct.unpack_from("<2f", raw, 23) == (1.5, -2.0)
    assert len(raw) == 23 + 8


def test_entries_sorted_by_name_makes_bytes_stable(tmp_path):
    a = tmp_path / "a.dfck"
    b = tmp_path / "b.dfck"
    x = np.ones(3, np.float32)
    y = np.zeros(2, np.float32)
    save_checkpoint(a, {"m": x, "k": y})
    save_checkpoint(b, {"k": y, "m": x})
    assert a.read_bytes() == b.read_bytes()


def test_non_finite_rejected(tmp_path):
    with pytest.raises(FloatingPointError, match="non-finite"):
        save_checkpoint(tmp_path / "x.dfck", {"w": np.array([np.inf])})


def test_corrupt_files_rejected(tmp_path):
    p = tmp_path / "x.dfck"
    p.write_bytes(b"NOPE" + b"\0" * 12)
    with pytest.raises(ValueError, match="bad magic"):
        load_checkpoint(p)
    save_checkpoint(p, {"w": np.ones(2, np.float32)})
    p.write_bytes(p.read_bytes() + b"\0\0")
    with pytest.raises(ValueError, match="trailing bytes"):
        load_checkpoint(p)


def test_model_checkpoint_rebuild_reproduces_logits(tmp_path):
    model = build_model(ModelConfig(arch="cpr", base_channels=8), seed=5)
    x = np.random.default_rng(1).standard_normal((2, 1, 64, 101)).astype(np.float32)
    with T.no_grad():
        want = model(x, training=False).data
    path = tmp_path / "m.dfck"
    save_model(model, path)
    rebuilt = model_from_checkpoint(path)
    assert rebuilt.config == model.config
    with T.no_grad():
        got = rebuilt(x, training=False).data
    assert np.array_equal(got, want)


def test_model_checkpoint_carries_running_stats(tmp_path):
    model = build_model(ModelConfig(arch="cpm", base_channels=4), seed=0)
    x = np.random.default_rng(2).standard_normal((4, 1, 64, 101)).astype(np.float32)
    model(x, training=True)  # move running stats off their init
    path = tmp_path / "m.dfck"
    save_model(model, path)
    rebuilt = model_from_checkpoint(path)
    for (_, b1), (_, b2) in zip(model.named_buffers(), rebuilt.named_buffers()):
        assert np.array_equal(b1, b2)


def test_load_state_dict_validates_keys_and_shapes(tmp_path):
    model = build_model(ModelConfig(arch="cpm", base_channels=4), seed=0)
    state = model.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(ValueError, match="state dict mismatch"):
        model.load_state_dict(state)
    state = model.state_dict()
    first = next(k for k, v in state.items() if np.asarray(v).ndim >= 1)
    state[first] = np.zeros((1, 1), np.float32)
    with pytest.raises(ValueError, match="shape mismatch"):
        model.load_state_dict(state)
