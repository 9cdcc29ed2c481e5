"""Checkpoint serialization: round-trips, corruption modes, compatibility."""

import struct

import numpy as np
import pytest

from quantext.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    require_vocab,
    save_checkpoint,
)


def _tensors(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "embed": rng.normal(size=(7, 4)).astype(np.float32),
        "conv_w": rng.normal(size=(3, 4, 5)).astype(np.float32),
        "bias": rng.normal(size=(5,)).astype(np.float32),
        "near_scalar": np.array([2.5], dtype=np.float32),
    }


def _save(path, tensors=None, kind="uom", fp="f" * 64):
    if tensors is None:
        tensors = _tensors()
    save_checkpoint(path, kind, tensors, {"embed_dim": 4, "lr": 0.001}, fp)


def test_round_trip(tmp_path):
    path = tmp_path / "m.ckpt"
    tensors = _tensors()
    _save(path, tensors)
    ckpt = load_checkpoint(path)
    assert ckpt.kind == "uom"
    assert ckpt.hyperparams == {"embed_dim": 4, "lr": 0.001}
    assert ckpt.vocab_fingerprint == "f" * 64
    assert set(ckpt.tensors) == set(tensors)
    for name, arr in tensors.items():
        got = ckpt.tensors[name]
        assert got.shape == arr.shape
        assert got.dtype == np.float32
        np.testing.assert_array_equal(got, arr)


def test_save_is_deterministic(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    _save(a)
    _save(b)
    assert a.read_bytes() == b.read_bytes()


def test_float64_input_is_stored_as_float32(tmp_path):
    path = tmp_path / "m.ckpt"
    _save(path, {"w": np.array([1.0, 2.0], dtype=np.float64)})
    got = load_checkpoint(path).tensors["w"]
    assert got.dtype == np.float32
    np.testing.assert_array_equal(got, [1.0, 2.0])


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    _save(path)
    raw = bytearray(path.read_bytes())
    raw[:8] = b"NOTCKPT!"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path)


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_truncated_header_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    _save(path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(MAGIC) + 8 + 4])
    with pytest.raises(CheckpointError, match="truncated header"):
        load_checkpoint(path)


def test_truncated_blob_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    _save(path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated tensor"):
        load_checkpoint(path)


def test_corrupt_header_json_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    _save(path)
    raw = bytearray(path.read_bytes())
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    raw[start:start + hlen] = b"\xff" * hlen
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="corrupt header"):
        load_checkpoint(path)


def test_unknown_format_version_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    _save(path)
    raw = path.read_bytes()
    start = len(MAGIC) + 8
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    header = raw[start:start + hlen].replace(
        b'"format_version":%d,' % FORMAT_VERSION,
        b'"format_version":9,')
    assert len(header) == hlen
    assert header != raw[start:start + hlen]
    path.write_bytes(raw[:start] + header + raw[start + hlen:])
    with pytest.raises(CheckpointError, match="unsupported format version"):
        load_checkpoint(path)


def test_require_vocab_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    _save(path, fp="a" * 64)
    ckpt = load_checkpoint(path)
    require_vocab(ckpt, "a" * 64)
    with pytest.raises(CheckpointError, match="fingerprint mismatch"):
        require_vocab(ckpt, "b" * 64, path=str(path))


def test_empty_tensor_directory(tmp_path):
    path = tmp_path / "m.ckpt"
    _save(path, tensors={})
    ckpt = load_checkpoint(path)
    assert ckpt.tensors == {}
    assert isinstance(ckpt, Checkpoint)
