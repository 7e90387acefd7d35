"""Training loops: Adam reference math, loss decrease, freeze contracts,
determinism, early stopping, and error paths."""

import numpy as np
import pytest

from adapterlab.adapters import PlacementPlan, attach, checksum
from adapterlab.encoder import Encoder, EncoderConfig
from adapterlab.synth import synth_clone_classes, synth_code_records, synth_nl_corpus
from adapterlab.tensor import ParameterSet
from adapterlab.tokenizer import train_bpe
from adapterlab.training import (AdamState, TrainConfig, TrainingError,
                                 adam_step, eval_mlm_loss, pretrain_mlm,
                                 train_language_adapter, train_task_adapter)

CFG = EncoderConfig(num_layers=2, hidden_size=32, num_heads=4, ffn_size=64,
                    vocab_size=0, max_positions=64, dropout=0.1)


@pytest.fixture(scope="module")
def corpus_and_vocab():
    texts = synth_nl_corpus(300, seed=0)
    vocab = train_bpe(texts, 400)
    return texts, vocab


def _encoder(vocab, seed=0):
    cfg = EncoderConfig(**{**CFG.to_dict(), "vocab_size": vocab.size})
    return Encoder(cfg, seed=seed)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_adam_step_matches_reference():
    ps = ParameterSet()
    ps.add("w", np.array([1.0, -2.0]))
    g = np.array([0.5, -0.1])
    cfg = TrainConfig(learning_rate=0.1)
    state = AdamState()
    adam_step(ps, {"w": g}, state, cfg)
    # closed form for the first step: update = lr * sign-ish expression
    m = (1 - cfg.beta1) * g
    v = (1 - cfg.beta2) * g * g
    m_hat = m / (1 - cfg.beta1)
    v_hat = v / (1 - cfg.beta2)
    want = np.array([1.0, -2.0]) - 0.1 * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    assert np.allclose(ps["w"].data, want, atol=1e-12)
    assert state.step == 1


def test_adam_step_shape_mismatch():
    ps = ParameterSet()
    ps.add("w", np.zeros(3))
    with pytest.raises(ValueError):
        adam_step(ps, {"w": np.zeros(2)}, AdamState(), TrainConfig())


def test_pretrain_reduces_val_loss(corpus_and_vocab):
    texts, vocab = corpus_and_vocab
    enc = _encoder(vocab)
    cfg = TrainConfig(learning_rate=1e-3, max_steps=60, eval_every=60,
                      max_len=32, seed=0)
    report = pretrain_mlm(enc, texts, vocab, cfg)
    assert report.val_curve[0] > report.val_curve[-1]
    assert report.steps == 60
    assert report.val_steps[0] == 0
    assert report.stopping_reason == "max steps"
    assert "validation" in report.to_json()


def test_pretrain_bit_exact_determinism(corpus_and_vocab):
    texts, vocab = corpus_and_vocab
    cfg = TrainConfig(learning_rate=1e-3, max_steps=10, eval_every=10,
                      max_len=32, seed=5)
    enc1, enc2 = _encoder(vocab), _encoder(vocab)
    pretrain_mlm(enc1, texts, vocab, cfg)
    pretrain_mlm(enc2, texts, vocab, cfg)
    assert checksum(enc1.params) == checksum(enc2.params)


def test_pretrain_empty_corpus(corpus_and_vocab):
    _, vocab = corpus_and_vocab
    with pytest.raises(TrainingError):
        pretrain_mlm(_encoder(vocab), [], vocab, TrainConfig())


def test_language_adapter_freezes_backbone(corpus_and_vocab):
    texts, vocab = corpus_and_vocab
    enc = _encoder(vocab)
    code = [r.code for r in synth_code_records("alpha", 60, seed=1)]
    attach(enc, PlacementPlan.full(CFG.num_layers, invertible=True), seed=2)
    backbone_before = checksum(enc.params, "emb."), checksum(enc.params, "layer."), \
        checksum(enc.params, "mlm.")
    adapter_before = checksum(enc.params, "l_adapter."), checksum(enc.params, "inv.")
    cfg = TrainConfig(learning_rate=1e-3, max_steps=20, eval_every=20,
                      max_len=48, seed=0)
    train_language_adapter(enc, code, vocab, cfg)
    backbone_after = checksum(enc.params, "emb."), checksum(enc.params, "layer."), \
        checksum(enc.params, "mlm.")
    adapter_after = checksum(enc.params, "l_adapter."), checksum(enc.params, "inv.")
    assert backbone_before == backbone_after
    assert adapter_before != adapter_after


def test_language_adapter_requires_stack(corpus_and_vocab):
    texts, vocab = corpus_and_vocab
    with pytest.raises(TrainingError):
        train_language_adapter(_encoder(vocab), texts, vocab, TrainConfig())


def test_task_adapter_freezes_backbone_and_l_adapters(corpus_and_vocab):
    _, vocab = corpus_and_vocab
    enc = _encoder(vocab)
    attach(enc, PlacementPlan.full(CFG.num_layers, t_adapters=True,
                                   invertible=True), seed=3)
    items = synth_clone_classes(5, 6, seed=0)
    train, val = items[:20], items[20:]
    frozen_before = (checksum(enc.params, "emb."), checksum(enc.params, "layer."),
                     checksum(enc.params, "l_adapter."), checksum(enc.params, "inv."))
    t_before = checksum(enc.params, "t_adapter.")
    cfg = TrainConfig(learning_rate=1e-3, max_steps=8, eval_every=8,
                      max_len=48, seed=0, classes_per_batch=3, items_per_class=2)
    report = train_task_adapter(enc, train, val, vocab, cfg, "retrieval")
    frozen_after = (checksum(enc.params, "emb."), checksum(enc.params, "layer."),
                    checksum(enc.params, "l_adapter."), checksum(enc.params, "inv."))
    assert frozen_before == frozen_after
    assert checksum(enc.params, "t_adapter.") != t_before
    assert report.val_metric_name == "map_at_r"
    assert enc.adapters.output_inverse_enabled is False


def test_task_adapter_pair_classification_registers_head(corpus_and_vocab):
    _, vocab = corpus_and_vocab
    from adapterlab.synth import pairs_from_retrieval
    enc = _encoder(vocab)
    attach(enc, PlacementPlan.full(CFG.num_layers, t_adapters=True,
                                   invertible=True), seed=3)
    items = synth_clone_classes(4, 4, seed=1)
    pairs = pairs_from_retrieval(items, 24, seed=0)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=4, max_steps=4,
                      eval_every=4, max_len=48, seed=0)
    report = train_task_adapter(enc, pairs[:20], pairs[20:], vocab, cfg,
                                "pair_classification")
    assert "head.pair.w" in enc.params
    assert report.val_metric_name == "f1"


def test_task_adapter_validation_errors(corpus_and_vocab):
    _, vocab = corpus_and_vocab
    enc = _encoder(vocab)
    attach(enc, PlacementPlan.full(CFG.num_layers, t_adapters=True), seed=0)
    items = synth_clone_classes(3, 4, seed=0)
    with pytest.raises(TrainingError):
        train_task_adapter(enc, items, [], vocab, TrainConfig(), "retrieval")
    with pytest.raises(TrainingError):
        train_task_adapter(enc, items, items, vocab, TrainConfig(), "ranking")
    bare = _encoder(vocab)
    with pytest.raises(TrainingError):
        train_task_adapter(bare, items, items, vocab, TrainConfig(), "retrieval")


def test_early_stopping_fires(corpus_and_vocab):
    texts, vocab = corpus_and_vocab
    enc = _encoder(vocab)
    # absurd learning rate keeps validation flat-or-worse quickly
    cfg = TrainConfig(learning_rate=1e-9, max_steps=40, eval_every=5,
                      early_stop=True, patience=2, max_len=32, seed=0)
    report = pretrain_mlm(enc, texts, vocab, cfg)
    assert report.steps < 40
    assert "early stop" in report.stopping_reason


def test_eval_mlm_loss_deterministic(corpus_and_vocab):
    texts, vocab = corpus_and_vocab
    enc = _encoder(vocab)
    cfg = TrainConfig(max_len=32)
    a = eval_mlm_loss(enc, texts[:20], vocab, cfg)
    b = eval_mlm_loss(enc, texts[:20], vocab, cfg)
    assert a == b
