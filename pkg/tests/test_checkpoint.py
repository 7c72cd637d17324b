import numpy as np
import pytest

from scmix import autodiff as ad
from scmix import model as tm
from scmix.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from scmix.errors import CheckpointError


def make_params(tie=True):
    cfg = tm.TransformerConfig(vocab_size=10, d_model=8, n_layers=1, n_heads=2,
                               max_seq_len=12, tie_embeddings=tie)
    return tm.init_params(cfg, seed=0)


@pytest.mark.parametrize("tie", [True, False])
def test_roundtrip_exact(tmp_path, tie):
    params = make_params(tie)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert loaded.config == params.config
    assert list(loaded.tensors) == list(params.tensors)
    for name, t in params.items():
        assert np.array_equal(t.data, loaded[name].data)
        assert loaded[name].requires_grad


def test_save_load_save_byte_identical(tmp_path):
    params = make_params()
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    save_checkpoint(first, params)
    save_checkpoint(second, load_checkpoint(first))
    assert first.read_bytes() == second.read_bytes()


def test_magic_enforced(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\n" * 4)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncation_detected(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes_detected(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_header_starts_with_magic(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    assert path.read_bytes()[:8] == MAGIC


def test_loaded_model_forward_matches(tmp_path):
    params = make_params()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    tokens = [1, 2, 3]
    with ad.no_grad():
        a = tm.forward(params, tokens).logits.data
        b = tm.forward(loaded, tokens).logits.data
    assert np.array_equal(a, b)
