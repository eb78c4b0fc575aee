"""Checkpoint container: exact byte layout and round-tripping."""

import struct

import numpy as np
import pytest

from playback.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_roundtrip_preserves_values_and_order(tmp_path):
    state = {"enc.w": np.arange(6, dtype=float).reshape(2, 3),
             "head.b": np.array([1.5, -2.5]),
             "scalarish": np.array(7.0)}
    path = tmp_path / "model.pibk"
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(state)
    for name in state:
        np.testing.assert_array_equal(loaded[name], state[name])


def test_exact_byte_layout(tmp_path):
    path = tmp_path / "one.pibk"
    save_checkpoint(path, {"w": np.array([[1.0, 2.0]])})
    blob = path.read_bytes()
    assert blob[:5] == b"PIBK1"
    name_len = struct.unpack("<I", blob[5:9])[0]
    assert name_len == 1 and blob[9:10] == b"w"
    rank = struct.unpack("<I", blob[10:14])[0]
    assert rank == 2
    dims = struct.unpack("<II", blob[14:22])
    assert dims == (1, 2)
    values = np.frombuffer(blob[22:], dtype="<f8")
    np.testing.assert_array_equal(values, [1.0, 2.0])
    assert len(blob) == 22 + 16


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.pibk"
    path.write_bytes(b"NOPE!" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_file_names_missing_piece(tmp_path):
    path = tmp_path / "trunc.pibk"
    save_checkpoint(path, {"weights": np.ones(4)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="values of 'weights'"):
        load_checkpoint(path)
