import numpy as np
import pytest

from reidloop import TrainerConfig, load_checkpoint, save_checkpoint
from reidloop.checkpoint import MAGIC, CheckpointError
from conftest import random_state


def test_roundtrip_bit_identical(tmp_path, rng):
    state = random_state(rng, 4, 6)
    cfg = TrainerConfig(alpha=0.002, beta=0.003, eta=0.5, rho=1.5,
                        epochs=17, iters_per_epoch=33, seed=91)
    path = tmp_path / "model.tma"
    save_checkpoint(path, state, cfg)
    back, cfg2 = load_checkpoint(path)
    for a, b in ((state.K, back.K), (state.P, back.P), (state.U, back.U),
                 (state.V, back.V), (state.Lam, back.Lam), (state.Psi, back.Psi)):
        assert np.array_equal(a, b)
    assert cfg2 == cfg


def test_header_layout(tmp_path, rng):
    state = random_state(rng, 2, 3)
    path = tmp_path / "model.tma"
    save_checkpoint(path, state, TrainerConfig())
    blob = path.read_bytes()
    assert blob[:4] == MAGIC == b"TMA1"
    version, d, r = np.frombuffer(blob[4:16], dtype="<u4")
    assert (version, d, r) == (1, 3, 2)
    K = np.frombuffer(blob[16:16 + 2 * 3 * 8], dtype="<f8").reshape(2, 3)
    assert np.array_equal(K, state.K)
    trailer = blob[16 + 6 * 2 * 3 * 8:]
    assert trailer.startswith(b"{")


def test_bad_magic(tmp_path):
    path = tmp_path / "x.tma"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncated_body(tmp_path, rng):
    state = random_state(rng, 3, 3)
    path = tmp_path / "model.tma"
    save_checkpoint(path, state, TrainerConfig())
    clipped = tmp_path / "clipped.tma"
    clipped.write_bytes(path.read_bytes()[:60])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(clipped)


def test_bad_trailer(tmp_path, rng):
    state = random_state(rng, 2, 2)
    path = tmp_path / "model.tma"
    save_checkpoint(path, state, TrainerConfig())
    blob = path.read_bytes()
    body_end = 16 + 6 * 2 * 2 * 8
    (tmp_path / "bad.tma").write_bytes(blob[:body_end] + b"not json")
    with pytest.raises(CheckpointError, match="trailer"):
        load_checkpoint(tmp_path / "bad.tma")


def test_no_tmp_file_left_behind(tmp_path, rng):
    state = random_state(rng, 2, 2)
    save_checkpoint(tmp_path / "model.tma", state, TrainerConfig())
    assert [p.name for p in tmp_path.iterdir()] == ["model.tma"]
