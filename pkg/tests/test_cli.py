"""CLI: dispatch, config/override plumbing, exit codes, and a miniature
end-to-end pipeline through every subcommand."""

import json
import os

import numpy as np
import pytest

from adapterlab.cli import dispatch

TINY = [
    "--set", "encoder.num_layers=2", "--set", "encoder.hidden_size=32",
    "--set", "encoder.num_heads=2", "--set", "encoder.ffn_size=64",
]


def _run(argv):
    return dispatch(argv)


def _report(out):
    return json.loads((out / "report.json").read_text())


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Shared miniature pipeline: vocab -> backbone -> L-adapter."""
    root = tmp_path_factory.mktemp("cli")
    assert _run(["tokenizer-train", "--out", str(root / "tok"), "--seed", "0",
                 "--set", "vocab_size=512",
                 "--set", "synthetic.n_sentences=400"]) == 0
    vocab = str(root / "tok" / "vocab.txt")
    assert _run(["pretrain", "--out", str(root / "pre"), "--seed", "0",
                 "--set", f"vocab={vocab}", *TINY,
                 "--set", "train.max_steps=25", "--set", "train.max_len=32",
                 "--set", "synthetic.n_sentences=400"]) == 0
    assert _run(["train-lang-adapter", "--out", str(root / "la"), "--seed", "0",
                 "--set", f"vocab={vocab}",
                 "--set", f"backbone={root / 'pre' / 'backbone.ckpt'}",
                 "--set", "train.max_steps=15", "--set", "synthetic.n=60"]) == 0
    return root, vocab


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        dispatch(["frobnicate"])
    assert e.value.code == 2


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        dispatch(["budget", "--unknown-flag"])
    assert e.value.code == 2


def test_missing_precondition_exits_1_with_error_json(tmp_path, capsys):
    rc = _run(["eval-cloze", "--out", str(tmp_path)])
    assert rc == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert "message" in err and err["subcommand"] == "eval-cloze"


def test_bad_override_exits_1(tmp_path):
    rc = _run(["budget", "--out", str(tmp_path), "--set", "noequals"])
    assert rc == 1


def test_budget_paper_scale(tmp_path, capsys):
    assert _run(["budget", "--paper-scale", "--out", str(tmp_path)]) == 0
    rep = _report(tmp_path)
    assert abs(rep["counts"]["backbone"] - 124_696_665) < 1_250_000
    assert abs(rep["megabytes"]["l_adapters"] - 28.20) < 1.0
    out = capsys.readouterr().out
    assert "backbone" in out and "ratio" in out


def test_budget_custom_config(tmp_path):
    assert _run(["budget", "--out", str(tmp_path), *TINY]) == 0
    rep = _report(tmp_path)
    assert rep["counts"]["backbone"] > 0


def test_effective_config_echoed(tmp_path):
    assert _run(["budget", "--out", str(tmp_path),
                 "--set", "encoder.num_layers=2"]) == 0
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["config"]["encoder"]["num_layers"] == 2
    assert cfg["subcommand"] == "budget"
    assert "seed" in cfg


def test_config_file_with_override(tmp_path):
    f = tmp_path / "cfg.json"
    f.write_text(json.dumps({"encoder": {"num_layers": 3, "hidden_size": 16,
                                         "num_heads": 2, "ffn_size": 32}}))
    assert _run(["budget", "--config", str(f), "--out", str(tmp_path / "o"),
                 "--set", "encoder.num_layers=1"]) == 0
    cfg = json.loads((tmp_path / "o" / "config.json").read_text())
    assert cfg["config"]["encoder"]["num_layers"] == 1
    assert cfg["config"]["encoder"]["hidden_size"] == 16


def test_seed_env_and_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("ADAPTERLAB_SEED", "77")
    assert _run(["budget", "--out", str(tmp_path / "a")]) == 0
    assert _report(tmp_path / "a")["seed"] == 77
    assert _run(["budget", "--out", str(tmp_path / "b"), "--seed", "5"]) == 0
    assert _report(tmp_path / "b")["seed"] == 5


def test_pipeline_artifacts(pipeline):
    root, _ = pipeline
    assert (root / "pre" / "backbone.ckpt").exists()
    assert (root / "pre" / "train_report.json").exists()
    assert (root / "la" / "l_adapter.ckpt").exists()
    rep = _report(root / "la")
    assert rep["language"] == "alpha"


def test_eval_cloze_cli(pipeline, tmp_path):
    root, vocab = pipeline
    assert _run(["eval-cloze", "--out", str(tmp_path), "--seed", "0",
                 "--set", f"vocab={vocab}",
                 "--set", f"model={root / 'la' / 'l_adapter.ckpt'}",
                 "--set", "synthetic.n=30"]) == 0
    rep = _report(tmp_path)
    assert 0.0 <= rep["accuracy"] <= 1.0 and rep["n_examples"] > 0
    assert (tmp_path / "predictions.json").exists()


def test_train_task_adapter_and_eval_clone_cli(pipeline, tmp_path):
    root, vocab = pipeline
    assert _run(["train-task-adapter", "--out", str(tmp_path / "ta"),
                 "--seed", "0", "--set", f"vocab={vocab}",
                 "--set", f"model={root / 'la' / 'l_adapter.ckpt'}",
                 "--set", "train.max_steps=6", "--set", "train.eval_every=6",
                 "--set", "synthetic.n_classes=5",
                 "--set", "synthetic.per_class=5"]) == 0
    rep = _report(tmp_path / "ta")
    assert rep["val_metric"] == "map_at_r"
    assert _run(["eval-clone", "--out", str(tmp_path / "ec"), "--seed", "0",
                 "--set", f"vocab={vocab}",
                 "--set", f"model={tmp_path / 'ta' / 't_adapter.ckpt'}",
                 "--set", "synthetic.n_classes=5",
                 "--set", "synthetic.per_class=5"]) == 0
    rep2 = _report(tmp_path / "ec")
    assert 0.0 <= rep2["map_at_r"] <= 1.0


def test_sweep_layers_cli(pipeline, tmp_path):
    root, vocab = pipeline
    assert _run(["sweep-layers", "--out", str(tmp_path), "--seed", "0",
                 "--set", f"vocab={vocab}",
                 "--set", f"model={root / 'la' / 'l_adapter.ckpt'}",
                 "--set", "synthetic.n=20"]) == 0
    rep = _report(tmp_path)
    assert [row["i"] for row in rep["rows"]] == [0, 1, 2]
    assert rep["mode"] == "truncate"


def test_sweep_layers_bad_range(pipeline, tmp_path):
    root, vocab = pipeline
    rc = _run(["sweep-layers", "--out", str(tmp_path), "--seed", "0",
               "--set", f"vocab={vocab}",
               "--set", f"model={root / 'la' / 'l_adapter.ckpt'}",
               "--set", "layers=0..9"])
    assert rc == 1


def test_zero_shot_cli(pipeline, tmp_path):
    root, vocab = pipeline
    assert _run(["zero-shot", "--out", str(tmp_path), "--seed", "0",
                 "--adapter", str(root / "la" / "l_adapter.ckpt"),
                 "--eval-language", "beta",
                 "--set", f"vocab={vocab}", "--set", "synthetic.n=20"]) == 0
    rep = _report(tmp_path)
    assert rep["train_language"] == "alpha"
    assert set(rep["cloze_accuracy"]) == {"alpha", "beta"}
