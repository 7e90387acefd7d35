"""Cloze-test evaluation, clone-detection heads and losses, and metrics
(accuracy, F1, MAP@R).

Retrieval uses cosine similarity on unit-norm mean-pooled embeddings with
deterministic tie-break by ascending item id. Pair classification feeds
[e_a; e_b; |e_a - e_b|; e_a * e_b] through one linear layer and a sigmoid.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import ClozeRecord, PairRecord, RetrievalRecord
from .encoder import Encoder
from .tensor import ParameterSet, Tensor
from .tokenizer import Vocabulary, encode_batch


class TaskError(ValueError):
    pass


# -- cloze test ------------------------------------------------------------

@dataclasses.dataclass
class ClozeResult:
    accuracy: float
    n: int
    predictions: list[dict]


def eval_cloze(encoder: Encoder, examples: Sequence[ClozeRecord], mask_id: int,
               batch_size: int = 16) -> ClozeResult:
    """Argmax over candidate logits at the single mask position; no training."""
    if not examples:
        raise TaskError("empty cloze example set")
    for ex in examples:
        if ex.answer not in ex.candidates:
            raise TaskError(f"example {ex.id}: gold answer not in candidates")
        if ex.tokens.count(mask_id) != 1 or ex.tokens[ex.mask_index] != mask_id:
            raise TaskError(f"example {ex.id}: expected exactly one mask "
                            f"at position {ex.mask_index}")
    predictions = []
    correct = 0
    pad = 0  # ids are pre-tokenized; pad with 0 and mask it out
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        width = max(len(ex.tokens) for ex in chunk)
        ids = np.full((len(chunk), width), pad, dtype=np.int64)
        attn = np.zeros_like(ids)
        for r, ex in enumerate(chunk):
            ids[r, :len(ex.tokens)] = ex.tokens
            attn[r, :len(ex.tokens)] = 1
        hidden = encoder.forward(ids, attn, mode="mlm")
        logits = encoder.mlm_logits(hidden).data
        for r, ex in enumerate(chunk):
            row = logits[r, ex.mask_index]
            cand = np.asarray(ex.candidates)
            pred = int(cand[np.argmax(row[cand])])
            ok = pred == ex.answer
            correct += ok
            predictions.append({"id": ex.id, "prediction": pred,
                                "answer": ex.answer, "correct": bool(ok)})
    return ClozeResult(accuracy=correct / len(examples), n=len(examples),
                       predictions=predictions)


# -- retrieval -------------------------------------------------------------

@dataclasses.dataclass
class EmbedResult:
    ids: list[str]
    labels: list[str]
    embeddings: np.ndarray  # [n, h], unit rows
    n_truncated: int


def embed_corpus(encoder: Encoder, items: Sequence[RetrievalRecord],
                 vocab: Vocabulary, max_len: int | None = None,
                 batch_size: int = 16) -> EmbedResult:
    max_len = max_len or encoder.config.max_positions
    rows, n_truncated = [], 0
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        texts = [it.code for it in chunk]
        n_truncated += sum(len(vocab.encode(t)) > max_len for t in texts)
        ids, attn = encode_batch(texts, vocab, max_len)
        hidden = encoder.forward(ids, attn, mode="embed")
        emb = encoder.sequence_embedding(hidden, attn)
        rows.append(emb.data)
    return EmbedResult(ids=[it.id for it in items],
                       labels=[it.label for it in items],
                       embeddings=np.concatenate(rows, axis=0),
                       n_truncated=n_truncated)


@dataclasses.dataclass
class RetrievalEvalResult:
    per_query_ap: list[float]
    r_per_query: list[int]
    map_at_r: float


def map_at_r(embeddings: np.ndarray, labels: Sequence, ids: Sequence | None = None,
             metric: str = "cosine") -> RetrievalEvalResult:
    """Mean over queries of (1/R) sum_i P(i), with R the query's same-class
    reference count and P(i) the precision at rank i when that retrieval is
    correct, else 0. Ties break by ascending item id.
    """
    embeddings = np.asarray(embeddings, dtype=float)
    labels = list(labels)
    n = len(labels)
    if n < 2 or embeddings.shape[0] != n:
        raise TaskError("need >= 2 items with one embedding per label")
    ids = list(range(n)) if ids is None else list(ids)
    counts: dict = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    singletons = sorted(str(lab) for lab, c in counts.items() if c < 2)
    if singletons:
        raise TaskError(f"singleton classes (need >= 2 members): {singletons}")

    if metric == "cosine":
        normed = embeddings / np.linalg.norm(embeddings, axis=1, keepdims=True)
        sims = normed @ normed.T
    elif metric == "euclidean":
        d = np.linalg.norm(embeddings[:, None, :] - embeddings[None, :, :], axis=-1)
        sims = -d
    else:
        raise TaskError(f"unknown metric {metric!r}")

    aps, rs = [], []
    for q in range(n):
        others = [j for j in range(n) if j != q]
        ranked = sorted(others, key=lambda j: (-sims[q, j], ids[j]))
        r = counts[labels[q]] - 1
        hits = 0
        ap = 0.0
        for rank, j in enumerate(ranked[:r], start=1):
            if labels[j] == labels[q]:
                hits += 1
                ap += hits / rank
        aps.append(ap / r)
        rs.append(r)
    return RetrievalEvalResult(per_query_ap=aps, r_per_query=rs,
                               map_at_r=float(np.mean(aps)))


# -- pair classification ---------------------------------------------------

@dataclasses.dataclass
class F1Result:
    precision: float
    recall: float
    f1: float
    degenerate: bool


def f1_score(tp: int, fp: int, tn: int, fn: int) -> F1Result:
    """Precision/recall/F1 from confusion counts; degenerate cases yield 0."""
    if min(tp, fp, tn, fn) < 0:
        raise TaskError("confusion counts must be nonnegative")
    degenerate = False
    if tp + fp == 0 or tp + fn == 0:
        degenerate = True
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    if p + r == 0:
        degenerate = True
    return F1Result(precision=p, recall=r, f1=f, degenerate=degenerate)


def register_pair_head(params: ParameterSet, hidden_size: int,
                       seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    params.add("head.pair.w", rng.normal(0.0, 0.02, size=(4 * hidden_size, 1)))
    params.add("head.pair.b", np.zeros((1,)))


def pair_features(e_a: Tensor, e_b: Tensor) -> Tensor:
    return T.concat([e_a, e_b, T.absolute(T.sub(e_a, e_b)), T.mul(e_a, e_b)],
                    axis=-1)


def pair_logits(params: ParameterSet, e_a: Tensor, e_b: Tensor) -> Tensor:
    feats = pair_features(e_a, e_b)
    return T.add(T.matmul(feats, params["head.pair.w"]), params["head.pair.b"])


def classify_pair(encoder: Encoder, pair: PairRecord, vocab: Vocabulary,
                  max_len: int | None = None) -> float:
    """Probability that the pair is a clone (threshold 0.5 for F1)."""
    max_len = max_len or encoder.config.max_positions
    ids, attn = encode_batch([pair.code_a, pair.code_b], vocab, max_len)
    hidden = encoder.forward(ids, attn, mode="embed")
    emb = encoder.sequence_embedding(hidden, attn)
    e_a = T.tslice(emb, (slice(0, 1), slice(None)))
    e_b = T.tslice(emb, (slice(1, 2), slice(None)))
    logit = pair_logits(encoder.params, e_a, e_b)
    return float(T.sigmoid(logit).data.squeeze())


def eval_pairs(encoder: Encoder, pairs: Sequence[PairRecord], vocab: Vocabulary,
               threshold: float = 0.5, max_len: int | None = None) -> dict:
    tp = fp = tn = fn = 0
    for pair in pairs:
        pred = classify_pair(encoder, pair, vocab, max_len) > threshold
        if pair.label and pred:
            tp += 1
        elif pair.label and not pred:
            fn += 1
        elif not pair.label and pred:
            fp += 1
        else:
            tn += 1
    res = f1_score(tp, fp, tn, fn)
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn,
            "precision": res.precision, "recall": res.recall, "f1": res.f1}


# -- contrastive loss ------------------------------------------------------

def in_batch_negative_loss(embeddings: Tensor, labels: Sequence,
                           temperature: float = 0.05) -> tuple[Tensor, int]:
    """Mean over anchors of -log(exp(s(a,p)/t) / sum_{x != a} exp(s(a,x)/t)),
    cosine similarity, averaging over each anchor's in-batch positives.

    Anchors without an in-batch positive are skipped; returns (loss,
    n_skipped). All anchors skipped is an error.
    """
    labels = list(labels)
    n = len(labels)
    if embeddings.shape[0] != n:
        raise TaskError("one label per embedding row required")
    normed = T.l2_normalize(embeddings)
    sims = T.matmul(normed, T.transpose(normed, (1, 0)))
    scaled = T.mul(sims, T.Tensor(1.0 / temperature))

    lab = np.asarray(labels)
    offdiag = 1.0 - np.eye(n)
    pos_mask = (lab[:, None] == lab[None, :]).astype(float) * offdiag
    pos_counts = pos_mask.sum(axis=1)
    valid = pos_counts > 0
    n_skipped = int((~valid).sum())
    if n_skipped == n:
        raise TaskError("no anchor has an in-batch positive")

    denom = T.tsum(T.mul(T.exp(scaled), T.Tensor(offdiag)), axis=1, keepdims=True)
    log_denom = T.log(denom)                       # [n, 1]
    per_pair = T.sub(log_denom, scaled)            # -log softmax numerator
    weights = np.zeros_like(pos_mask)
    n_valid = int(valid.sum())
    weights[valid] = pos_mask[valid] / (pos_counts[valid, None] * n_valid)
    loss = T.tsum(T.mul(per_pair, T.Tensor(weights)))
    return loss, n_skipped
