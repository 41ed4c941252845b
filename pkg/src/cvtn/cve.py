"""Cross-variable encoder.

Each variable's whole look-back window becomes one token, so self-attention
mixes information across variables rather than across time. A pre-norm
Transformer stack refines the tokens, a linear head maps token width L to the
horizon O, and a parallel linear trend branch (also L -> O, shared across
variables) is added before instance statistics are restored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import ParamContainer, ones_param, uniform_param, zeros_param
from .revin import RevIN, RevinState
from .tensor import Tensor


def tokenize(x_norm: Tensor) -> Tensor:
    """``[..., L, C]`` history -> ``[..., C, L]`` variate tokens."""
    return T.transpose(x_norm)


class TransformerBlock(ParamContainer):
    """Pre-norm block: ``v + Attn(LN(v))`` followed by ``+ FFN(LN(.))``."""

    def __init__(self, width: int, heads: int, d_ff: int, rng: np.random.Generator,
                 dropout: float = 0.1, activation: str = "gelu"):
        super().__init__()
        if heads < 1 or width % heads:
            raise ConfigError(f"token width {width} is not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.d_ff = d_ff
        self.dropout = dropout
        self.act = T.activation(activation)
        add = self.add
        add("ln1.gamma", ones_param((width,), ""))
        add("ln1.beta", zeros_param((width,), ""))
        for proj in ("q", "k", "v", "o"):
            add(f"attn.w{proj}", uniform_param(rng, (width, width), width, ""))
            add(f"attn.b{proj}", uniform_param(rng, (width,), width, ""))
        add("ln2.gamma", ones_param((width,), ""))
        add("ln2.beta", zeros_param((width,), ""))
        add("ffn.w1", uniform_param(rng, (width, d_ff), width, ""))
        add("ffn.b1", uniform_param(rng, (d_ff,), width, ""))
        add("ffn.w2", uniform_param(rng, (d_ff, width), d_ff, ""))
        add("ffn.b2", uniform_param(rng, (width,), d_ff, ""))

    def _split_heads(self, x: Tensor) -> Tensor:
        # [..., C, L] -> [..., h, C, L/h]
        lead = x.shape[:-1]
        x = T.reshape(x, lead + (self.heads, self.width // self.heads))
        return T.swapaxes(x, -2, -3)

    def _merge_heads(self, x: Tensor) -> Tensor:
        x = T.swapaxes(x, -2, -3)
        return T.reshape(x, x.shape[:-2] + (self.width,))

    def attention(self, h: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Multi-head self-attention over the token axis of ``h[..., C, L]``."""
        p = self._params
        q = self._split_heads(T.linear(h, p["attn.wq"], p["attn.bq"]))
        k = self._split_heads(T.linear(h, p["attn.wk"], p["attn.bk"]))
        v = self._split_heads(T.linear(h, p["attn.wv"], p["attn.bv"]))
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(self.width // self.heads))
        weights = T.dropout(T.softmax_rows(scores), self.dropout, rng, training)
        ctx = self._merge_heads(T.matmul(weights, v))
        return T.linear(ctx, p["attn.wo"], p["attn.bo"])

    def ffn(self, h: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        p = self._params
        hidden = self.act(T.linear(h, p["ffn.w1"], p["ffn.b1"]))
        hidden = T.dropout(hidden, self.dropout, rng, training)
        return T.dropout(T.linear(hidden, p["ffn.w2"], p["ffn.b2"]), self.dropout, rng, training)

    def __call__(self, v: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        p = self._params
        v = T.add(v, self.attention(T.layer_norm(v, p["ln1.gamma"], p["ln1.beta"]), training, rng))
        return T.add(v, self.ffn(T.layer_norm(v, p["ln2.gamma"], p["ln2.beta"]), training, rng))


@dataclass
class CveOutput:
    """Everything downstream stages need from one CVE pass."""

    z: Tensor  # decoded prediction [..., O, C]
    z_norm: Tensor  # prediction in the RevIN frame, before decode
    x_norm: Tensor  # RevIN-encoded history [..., L, C]
    state: RevinState


class CrossVariableEncoder(ParamContainer):
    def __init__(self, lookback: int, horizon: int, n_vars: int, rng: np.random.Generator, *,
                 layers: int = 2, heads: int = 8, d_ff: int | None = None, dropout: float = 0.1,
                 activation: str = "gelu", trend: bool = True, revin_eps: float = 1e-5,
                 revin_affine: bool = True):
        super().__init__()
        self.lookback = lookback
        self.horizon = horizon
        self.n_vars = n_vars
        self.trend = trend
        d_ff = 4 * lookback if d_ff is None else d_ff
        self.revin = RevIN(n_vars, eps=revin_eps, affine=revin_affine)
        self.adopt("cve", self.revin.parameters())
        self.blocks = [TransformerBlock(lookback, heads, d_ff, rng, dropout, activation)
                       for _ in range(layers)]
        for i, blk in enumerate(self.blocks):
            self.adopt(f"cve.block{i}", blk.parameters())
        self.add("cve.proj.w", uniform_param(rng, (lookback, horizon), lookback, ""))
        self.add("cve.proj.b", uniform_param(rng, (horizon,), lookback, ""))
        if trend:
            self.add("cve.trend.w", uniform_param(rng, (lookback, horizon), lookback, ""))
            self.add("cve.trend.b", uniform_param(rng, (horizon,), lookback, ""))

    def __call__(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> CveOutput:
        if x.ndim < 2 or x.shape[-2:] != (self.lookback, self.n_vars):
            raise ShapeError(f"CVE expects [..., {self.lookback}, {self.n_vars}], got {x.shape}")
        p = self._params
        x_norm, state = self.revin.encode(x)
        v0 = tokenize(x_norm)
        v = v0
        for blk in self.blocks:
            v = blk(v, training, rng)
        out = T.linear(v, p["cve.proj.w"], p["cve.proj.b"])  # [..., C, O]
        if self.trend:
            out = T.add(out, T.linear(v0, p["cve.trend.w"], p["cve.trend.b"]))
        z_norm = T.transpose(out)
        return CveOutput(self.revin.decode(z_norm, state), z_norm, x_norm, state)
