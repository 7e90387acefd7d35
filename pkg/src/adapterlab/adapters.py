"""Bottleneck language/task adapters, the invertible embedding adapter,
placement control, stacking, and the freeze policy.

A language adapter at layer l maps (h_l, r_l) -> U(ReLU(D(h_l))) + r_l where
h_l is the post-layer-norm hidden state and r_l the feed-forward residual.
Task adapters stack on top of language adapters. The invertible adapter is a
chain of additive coupling steps over a half-split of the embedding
dimensions, applied after the input embedding and inverted before the tied
output projection. Training a given component freezes every other byte of
the model.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib

import numpy as np

from . import tensor as T
from .encoder import Encoder
from .tensor import ParameterSet, Tensor


class FreezeMode(enum.Enum):
    PRETRAIN_BACKBONE = "pretrain_backbone"
    TRAIN_L_ADAPTER = "train_l_adapter"
    TRAIN_T_ADAPTER = "train_t_adapter"
    FINETUNE_ALL = "finetune_all"


_MODE_PREFIXES = {
    FreezeMode.PRETRAIN_BACKBONE: ("emb.", "layer.", "mlm."),
    FreezeMode.TRAIN_L_ADAPTER: ("l_adapter.", "inv."),
    FreezeMode.TRAIN_T_ADAPTER: ("t_adapter.", "head."),
    FreezeMode.FINETUNE_ALL: ("",),
}


@dataclasses.dataclass(frozen=True)
class PlacementPlan:
    """Which layers carry which adapter kind, plus invertible-adapter presence."""
    l_layers: frozenset[int] = frozenset()
    t_layers: frozenset[int] = frozenset()
    invertible: bool = False

    @classmethod
    def full(cls, num_layers: int, t_adapters: bool = False,
             invertible: bool = True, drop_l_from: int | None = None) -> "PlacementPlan":
        """All-layer plan; ``drop_l_from`` drops L-adapters from that layer up."""
        l_layers = set(range(1, num_layers + 1))
        if drop_l_from is not None:
            l_layers -= set(range(drop_l_from, num_layers + 1))
        t_layers = set(range(1, num_layers + 1)) if t_adapters else set()
        return cls(frozenset(l_layers), frozenset(t_layers), invertible)

    def truncated(self, i: int, num_layers: int) -> "PlacementPlan":
        """Keep adapters only at layers 1..i (the layer-sweep setting)."""
        if not 0 <= i <= num_layers:
            raise ValueError(f"truncation layer {i} outside [0, {num_layers}]")
        keep = set(range(1, i + 1))
        return PlacementPlan(self.l_layers & keep, self.t_layers & keep,
                             self.invertible if i > 0 else False)

    def to_dict(self) -> dict:
        return {"l_layers": sorted(self.l_layers),
                "t_layers": sorted(self.t_layers),
                "invertible": self.invertible}

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementPlan":
        return cls(frozenset(d["l_layers"]), frozenset(d["t_layers"]), d["invertible"])


@dataclasses.dataclass
class AdapterConfig:
    """Bottleneck sizes. Defaults: reduction 2 for L-adapters, 16 for
    T-adapters; the invertible adapter uses 2 additive coupling steps."""
    l_bottleneck: int | None = None     # default hidden/2
    t_bottleneck: int | None = None     # default max(1, hidden/16)
    inv_coupling_dim: int | None = None # default hidden/4
    inv_steps: int = 2

    def resolved(self, hidden_size: int) -> "ResolvedAdapterConfig":
        return ResolvedAdapterConfig(
            l_bottleneck=self.l_bottleneck or hidden_size // 2,
            t_bottleneck=self.t_bottleneck or max(1, hidden_size // 16),
            inv_coupling_dim=self.inv_coupling_dim or max(1, hidden_size // 4),
            inv_steps=self.inv_steps,
        )


@dataclasses.dataclass
class ResolvedAdapterConfig:
    l_bottleneck: int
    t_bottleneck: int
    inv_coupling_dim: int
    inv_steps: int


def bottleneck_param_count(hidden: int, bottleneck: int) -> int:
    """Down projection + bias, up projection + bias: 2hd + d + h."""
    return 2 * hidden * bottleneck + bottleneck + hidden


def invertible_param_count(hidden: int, coupling_dim: int, steps: int) -> int:
    half = hidden // 2
    return steps * (2 * half * coupling_dim + coupling_dim + half)


def bottleneck_forward(x: Tensor, down_w: Tensor, down_b: Tensor,
                       up_w: Tensor, up_b: Tensor) -> Tensor:
    return T.add(T.matmul(T.relu(T.add(T.matmul(x, down_w), down_b)), up_w), up_b)


def language_adapter_forward(h_l: Tensor, r_l: Tensor, down_w: Tensor,
                             down_b: Tensor, up_w: Tensor, up_b: Tensor) -> Tensor:
    """U(ReLU(D(h_l))) + r_l."""
    if h_l.shape != r_l.shape:
        raise ValueError(f"shape mismatch: {h_l.shape} vs {r_l.shape}")
    return T.add(bottleneck_forward(h_l, down_w, down_b, up_w, up_b), r_l)


def task_adapter_forward(la_out: Tensor, r_l: Tensor, down_w: Tensor,
                         down_b: Tensor, up_w: Tensor, up_b: Tensor) -> Tensor:
    """U(ReLU(D(la_out))) + r_l; ``la_out`` is the layer's L-adapter output,
    or the bare hidden state where the L-adapter is absent."""
    if la_out.shape != r_l.shape:
        raise ValueError(f"shape mismatch: {la_out.shape} vs {r_l.shape}")
    return T.add(bottleneck_forward(la_out, down_w, down_b, up_w, up_b), r_l)


class AdapterStack:
    """Adapter parameters registered into the host encoder's ParameterSet."""

    def __init__(self, encoder: Encoder, plan: PlacementPlan,
                 config: AdapterConfig | None = None, seed: int = 0):
        c = encoder.config
        self.plan = plan
        self.config = (config or AdapterConfig()).resolved(c.hidden_size)
        self.params = encoder.params
        self.hidden = c.hidden_size
        self.output_inverse_enabled = True
        bad = (plan.l_layers | plan.t_layers) - set(range(1, c.num_layers + 1))
        if bad:
            raise ValueError(f"adapter layers {sorted(bad)} outside [1, {c.num_layers}]")
        if plan.invertible and c.hidden_size % 2 != 0:
            raise ValueError("invertible adapter needs an even hidden size")
        rng = np.random.default_rng(seed)
        self._init_params(rng)

    def _init_params(self, rng: np.random.Generator) -> None:
        h = self.hidden

        def bottleneck(prefix: str, d: int) -> None:
            # Near-identity init: zero up-projection, small random down.
            self.params.add(f"{prefix}.down.w", rng.normal(0.0, 1e-3, size=(h, d)))
            self.params.add(f"{prefix}.down.b", np.zeros(d))
            self.params.add(f"{prefix}.up.w", np.zeros((d, h)))
            self.params.add(f"{prefix}.up.b", np.zeros(h))

        for l in sorted(self.plan.l_layers):
            bottleneck(f"l_adapter.{l}", self.config.l_bottleneck)
        for l in sorted(self.plan.t_layers):
            bottleneck(f"t_adapter.{l}", self.config.t_bottleneck)
        if self.plan.invertible:
            half, cdim = h // 2, self.config.inv_coupling_dim
            for k in range(self.config.inv_steps):
                self.params.add(f"inv.{k}.down.w", rng.normal(0.0, 1e-3, size=(half, cdim)))
                self.params.add(f"inv.{k}.down.b", np.zeros(cdim))
                self.params.add(f"inv.{k}.up.w", np.zeros((cdim, half)))
                self.params.add(f"inv.{k}.up.b", np.zeros(half))

    # -- hooks called by the encoder forward pass --------------------------
    def _coupler(self, k: int, z: Tensor) -> Tensor:
        p = self.params
        return bottleneck_forward(z, p[f"inv.{k}.down.w"], p[f"inv.{k}.down.b"],
                                  p[f"inv.{k}.up.w"], p[f"inv.{k}.up.b"])

    def embed_forward(self, x: Tensor) -> Tensor:
        if not self.plan.invertible:
            return x
        return self.invertible_forward(x)

    def invertible_forward(self, x: Tensor) -> Tensor:
        half = self.hidden // 2
        x1 = T.tslice(x, (..., slice(0, half)))
        x2 = T.tslice(x, (..., slice(half, self.hidden)))
        for k in range(self.config.inv_steps):
            if k % 2 == 0:
                x1 = T.add(x1, self._coupler(k, x2))
            else:
                x2 = T.add(x2, self._coupler(k, x1))
        return T.concat([x1, x2], axis=-1)

    def invertible_inverse(self, y: Tensor) -> Tensor:
        half = self.hidden // 2
        y1 = T.tslice(y, (..., slice(0, half)))
        y2 = T.tslice(y, (..., slice(half, self.hidden)))
        for k in reversed(range(self.config.inv_steps)):
            if k % 2 == 0:
                y1 = T.sub(y1, self._coupler(k, y2))
            else:
                y2 = T.sub(y2, self._coupler(k, y1))
        return T.concat([y1, y2], axis=-1)

    def output_inverse(self, x: Tensor) -> Tensor:
        if not (self.plan.invertible and self.output_inverse_enabled):
            return x
        return self.invertible_inverse(x)

    def layer_slot(self, l: int, h_l: Tensor, r_l: Tensor) -> Tensor:
        p = self.params
        out = r_l
        la_out = None
        if l in self.plan.l_layers:
            la_out = language_adapter_forward(
                h_l, r_l, p[f"l_adapter.{l}.down.w"], p[f"l_adapter.{l}.down.b"],
                p[f"l_adapter.{l}.up.w"], p[f"l_adapter.{l}.up.b"])
            out = la_out
        if l in self.plan.t_layers:
            base = la_out if la_out is not None else h_l
            out = task_adapter_forward(
                base, r_l, p[f"t_adapter.{l}.down.w"], p[f"t_adapter.{l}.down.b"],
                p[f"t_adapter.{l}.up.w"], p[f"t_adapter.{l}.up.b"])
        return out


def attach(encoder: Encoder, plan: PlacementPlan,
           config: AdapterConfig | None = None, seed: int = 0) -> AdapterStack:
    """Compose adapters into ``encoder``; layers outside the plan are untouched."""
    if encoder.adapters is not None:
        raise ValueError("encoder already has an adapter stack attached")
    stack = AdapterStack(encoder, plan, config, seed)
    encoder.adapters = stack
    return stack


def trainable_parameters(params: ParameterSet, mode: FreezeMode) -> list[str]:
    """Exactly the parameter names the given mode may train."""
    if mode not in _MODE_PREFIXES:
        raise ValueError(f"unknown freeze mode {mode!r}")
    prefixes = _MODE_PREFIXES[mode]
    return [n for n in params.names() if n.startswith(prefixes)]


def apply_freeze(params: ParameterSet, mode: FreezeMode) -> list[str]:
    """Set trainable flags per ``mode``; returns the trainable names."""
    names = set(trainable_parameters(params, mode))
    for n in params.names():
        params.set_trainable(n, n in names)
    return sorted(names)


def checksum(params: ParameterSet, prefix: str = "") -> str:
    """SHA-256 over the raw little-endian bytes of all matching parameters."""
    digest = hashlib.sha256()
    for name in sorted(params.names()):
        if name.startswith(prefix):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())
    return digest.hexdigest()
