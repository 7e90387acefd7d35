"""RoBERTa-style transformer encoder with an MLM head and an embedding head.

Post-layer-norm layers: attention -> add&norm -> feed-forward -> (adapter
slot) -> add&norm. The MLM output projection is tied to the input token
embeddings. An attached adapter stack (see adapters module) hooks into the
embedding output, each layer's feed-forward slot, and the pre-projection
point of the MLM head.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import tensor as T
from .tensor import ParameterSet, Tensor


@dataclasses.dataclass
class EncoderConfig:
    num_layers: int = 4
    hidden_size: int = 64
    num_heads: int = 4
    ffn_size: int = 256
    vocab_size: int = 2048
    max_positions: int = 128
    dropout: float = 0.1
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden_size must be divisible by num_heads")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


# Reference config matching the paper-scale 12-layer backbone.
PAPER_SCALE_CONFIG = EncoderConfig(
    num_layers=12, hidden_size=768, num_heads=12, ffn_size=3072,
    vocab_size=50265, max_positions=514, dropout=0.1,
)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


class Encoder:
    """The frozen backbone MLM ("N-PTLM" role); adapters are attached on top."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        self.params = ParameterSet()
        self.adapters = None  # set by adapters.attach
        self._init_params(np.random.default_rng(seed))

    # -- parameters --------------------------------------------------------
    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        h, ff, V = c.hidden_size, c.ffn_size, c.vocab_size
        std = 0.02

        def w(name, shape):
            self.params.add(name, rng.normal(0.0, std, size=shape))

        def zeros(name, shape):
            self.params.add(name, np.zeros(shape))

        def ones(name, shape):
            self.params.add(name, np.ones(shape))

        w("emb.tok", (V, h))
        w("emb.pos", (c.max_positions, h))
        ones("emb.ln.w", (h,))
        zeros("emb.ln.b", (h,))
        for l in range(1, c.num_layers + 1):
            for role in ("q", "k", "v", "o"):
                w(f"layer.{l}.attn.{role}.w", (h, h))
                zeros(f"layer.{l}.attn.{role}.b", (h,))
            ones(f"layer.{l}.ln1.w", (h,))
            zeros(f"layer.{l}.ln1.b", (h,))
            w(f"layer.{l}.ffn.w1", (h, ff))
            zeros(f"layer.{l}.ffn.b1", (ff,))
            w(f"layer.{l}.ffn.w2", (ff, h))
            zeros(f"layer.{l}.ffn.b2", (h,))
            ones(f"layer.{l}.ln2.w", (h,))
            zeros(f"layer.{l}.ln2.b", (h,))
        w("mlm.dense.w", (h, h))
        zeros("mlm.dense.b", (h,))
        ones("mlm.ln.w", (h,))
        zeros("mlm.ln.b", (h,))
        zeros("mlm.bias", (V,))

    def backbone_param_names(self) -> list[str]:
        return [n for n in self.params.names()
                if n.startswith(("emb.", "layer.", "mlm."))]

    # -- forward -----------------------------------------------------------
    def _attention(self, x: Tensor, attention_mask: np.ndarray, l: int,
                   training: bool, rng) -> Tensor:
        c = self.config
        p = self.params
        B, L, h = x.shape
        nh, dh = c.num_heads, c.hidden_size // c.num_heads

        def heads(t):
            return T.transpose(T.reshape(t, (B, L, nh, dh)), (0, 2, 1, 3))

        q = heads(_linear(x, p[f"layer.{l}.attn.q.w"], p[f"layer.{l}.attn.q.b"]))
        k = heads(_linear(x, p[f"layer.{l}.attn.k.w"], p[f"layer.{l}.attn.k.b"]))
        v = heads(_linear(x, p[f"layer.{l}.attn.v.w"], p[f"layer.{l}.attn.v.b"]))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))),
                       T.Tensor(1.0 / math.sqrt(dh)))
        key_mask = attention_mask[:, None, None, :]
        probs = T.masked_softmax(scores, key_mask)
        probs = T.dropout(probs, c.dropout, rng, training)
        ctx = T.matmul(probs, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, L, h))
        return _linear(ctx, p[f"layer.{l}.attn.o.w"], p[f"layer.{l}.attn.o.b"])

    def forward(self, ids: np.ndarray, attention_mask: np.ndarray,
                mode: str = "mlm", training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Hidden states [batch, len, h]; ``mode`` is {"mlm", "embed"}."""
        if mode not in ("mlm", "embed"):
            raise ValueError(f"unknown mode {mode!r}")
        ids = np.asarray(ids)
        attention_mask = np.asarray(attention_mask)
        c, p = self.config, self.params
        if ids.shape[1] > c.max_positions:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds "
                             f"max_positions {c.max_positions}")
        if (ids < 0).any() or (ids >= c.vocab_size).any():
            raise ValueError("token id out of vocabulary range")
        if attention_mask.shape != ids.shape:
            raise ValueError("attention mask shape must match ids")

        positions = np.arange(ids.shape[1])
        x = T.add(T.embedding(p["emb.tok"], ids),
                  T.embedding(p["emb.pos"], positions))
        x = T.layer_norm(x, p["emb.ln.w"], p["emb.ln.b"], c.ln_eps)
        if self.adapters is not None:
            x = self.adapters.embed_forward(x)
        x = T.dropout(x, c.dropout, rng, training)

        for l in range(1, c.num_layers + 1):
            attn = self._attention(x, attention_mask, l, training, rng)
            attn = T.dropout(attn, c.dropout, rng, training)
            h1 = T.layer_norm(T.add(x, attn), p[f"layer.{l}.ln1.w"],
                              p[f"layer.{l}.ln1.b"], c.ln_eps)
            f = _linear(T.gelu(_linear(h1, p[f"layer.{l}.ffn.w1"],
                                       p[f"layer.{l}.ffn.b1"])),
                        p[f"layer.{l}.ffn.w2"], p[f"layer.{l}.ffn.b2"])
            f = T.dropout(f, c.dropout, rng, training)
            if self.adapters is not None:
                f = self.adapters.layer_slot(l, h1, f)
            x = T.layer_norm(T.add(h1, f), p[f"layer.{l}.ln2.w"],
                             p[f"layer.{l}.ln2.b"], c.ln_eps)
        if not np.isfinite(x.data).all():
            raise T.NumericError("non-finite hidden states")
        return x

    def mlm_logits(self, hidden: Tensor) -> Tensor:
        """[batch, len, V] logits through the tied output projection.

        When an invertible adapter is attached, its inverse runs immediately
        before the tied projection.
        """
        p = self.params
        x = _linear(hidden, p["mlm.dense.w"], p["mlm.dense.b"])
        x = T.gelu(x)
        x = T.layer_norm(x, p["mlm.ln.w"], p["mlm.ln.b"], self.config.ln_eps)
        if self.adapters is not None:
            x = self.adapters.output_inverse(x)
        return T.add(T.matmul(x, T.transpose(p["emb.tok"], (1, 0))), p["mlm.bias"])

    def sequence_embedding(self, hidden: Tensor, attention_mask: np.ndarray) -> Tensor:
        """Mean of non-pad position vectors, L2-normalized; [batch, h]."""
        attention_mask = np.asarray(attention_mask)
        if (attention_mask.sum(axis=1) == 0).any():
            raise ValueError("all-pad row in attention mask")
        m = T.Tensor(attention_mask[:, :, None].astype(float))
        summed = T.tsum(T.mul(hidden, m), axis=1)
        counts = T.Tensor(attention_mask.sum(axis=1, keepdims=True).astype(float))
        return T.l2_normalize(T.div(summed, counts))
