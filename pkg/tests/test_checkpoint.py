"""Checkpoint container: round-trip fidelity, manifest contents, and
format validation."""

import zipfile

import numpy as np
import pytest

from adapterlab.checkpoint import (CheckpointError, load_checkpoint,
                                   save_checkpoint)


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"emb.tok": rng.normal(size=(7, 3)),
              "layer.1.ffn.w1": rng.normal(size=(3, 5)),
              "mlm.bias": rng.normal(size=7)}
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, "backbone", params, config={"hidden_size": 3},
                    extra={"language": "alpha"})
    manifest, loaded = load_checkpoint(p)
    assert manifest["kind"] == "backbone"
    assert manifest["config"] == {"hidden_size": 3}
    assert manifest["language"] == "alpha"
    assert set(loaded) == set(params)
    for name in params:
        assert (loaded[name] == params[name]).all()
        assert loaded[name].dtype == np.float64


def test_unknown_kind_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.ckpt", "decoder", {})


def test_wrong_format_rejected(tmp_path):
    p = tmp_path / "bad.ckpt"
    with zipfile.ZipFile(p, "w") as zf:
        zf.writestr("manifest.json", '{"format": "other v9", "params": {}}')
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_placement_and_adapter_config_stored(tmp_path):
    p = tmp_path / "a.ckpt"
    save_checkpoint(p, "l_adapter", {"l_adapter.1.down.w": np.zeros((4, 2))},
                    placement={"l_layers": [1], "t_layers": [], "invertible": True},
                    adapter_config={"l_bottleneck": 2})
    manifest, _ = load_checkpoint(p)
    assert manifest["placement"]["invertible"] is True
    assert manifest["adapter_config"]["l_bottleneck"] == 2
