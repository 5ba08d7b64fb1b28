import os

import numpy as np
import pytest

from sentinel.checkpoint import (
    checkpoint_bytes_digest,
    load_checkpoint,
    save_checkpoint,
)
from sentinel.errors import CorruptCheckpoint, VersionMismatch
from sentinel.gnn import AdamState, init_params


def _trained_state(seed=5):
    params = init_params((6, 8, 4), seed=seed)
    adam = AdamState.fresh(params)
    adam.t = 17
    for arr in adam.m.flat_arrays():
        arr += 0.125
    params.version = 3
    return params, adam


def test_roundtrip_bit_exact(tmp_path):
    params, adam = _trained_state()
    aux = {"tau": 0.42, "vocab": ["a", "b"], "history": {"u1": {"read": 2.5}}}
    first = tmp_path / "model.ckpt"
    save_checkpoint(first, params, adam, aux)

    loaded_params, loaded_adam, loaded_aux = load_checkpoint(first)
    assert loaded_aux == aux
    assert loaded_params.dims == params.dims
    assert loaded_params.version == 3
    assert loaded_adam.t == 17
    for a, b in zip(params.flat_arrays(), loaded_params.flat_arrays()):
        np.testing.assert_array_equal(a, b)

    second = tmp_path / "again.ckpt"
    save_checkpoint(second, loaded_params, loaded_adam, loaded_aux)
    assert checkpoint_bytes_digest(first) == checkpoint_bytes_digest(second)


def test_wrong_magic_and_version(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(VersionMismatch):
        load_checkpoint(bad)

    params, adam = _trained_state()
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, params, adam)
    data = bytearray(good.read_bytes())
    data[8] = 99  # format version byte
    good.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        load_checkpoint(good)


def test_truncation_detected(tmp_path):
    params, adam = _trained_state()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, adam)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_interrupted_save_keeps_previous(tmp_path, monkeypatch):
    params, adam = _trained_state()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, adam, {"gen": 1})
    before = checkpoint_bytes_digest(path)

    # simulate a crash between temp write and rename
    real_replace = os.replace

    def boom(src, dst):
        raise OSError("simulated crash")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        save_checkpoint(path, params, adam, {"gen": 2})
    monkeypatch.setattr(os, "replace", real_replace)

    assert checkpoint_bytes_digest(path) == before
    _, _, aux = load_checkpoint(path)
    assert aux == {"gen": 1}
    assert not list(tmp_path.glob(".ckpt-*.tmp"))


def test_save_without_adam_state(tmp_path):
    params, _ = _trained_state()
    path = tmp_path / "bare.ckpt"
    save_checkpoint(path, params)
    loaded, adam, aux = load_checkpoint(path)
    assert adam.t == 0
    assert aux == {}
    for arr in adam.m.flat_arrays():
        assert np.all(arr == 0.0)
