"""Transformer building blocks over a ParamStore.

Every block registers its parameters under a dotted prefix at construction
time (``init_*``) and reads them back by name in the forward functions.
"""

from __future__ import annotations

import numpy as np

from popgraph.core import tensor as T
from popgraph.core.params import Initializer, ParamStore
from popgraph.core.tensor import Tensor


def init_linear(ps: ParamStore, init: Initializer, prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
    ps.add(f"{prefix}.w", init.linear(fan_in, fan_out))
    if bias:
        ps.add(f"{prefix}.b", init.zeros(fan_out))


def linear(ps: ParamStore, prefix: str, x) -> Tensor:
    b = ps[f"{prefix}.b"] if f"{prefix}.b" in ps else None
    return T.linear(x, ps[f"{prefix}.w"], b)


def init_layer_norm(ps: ParamStore, prefix: str, width: int) -> None:
    ps.add(f"{prefix}.g", Initializer.ones(width))
    ps.add(f"{prefix}.b", Initializer.zeros(width))


def layer_norm(ps: ParamStore, prefix: str, x) -> Tensor:
    return T.layer_norm(x, ps[f"{prefix}.g"], ps[f"{prefix}.b"])


def init_attention(ps: ParamStore, init: Initializer, prefix: str, width: int) -> None:
    # no key bias: softmax over keys is invariant to it, so its gradient is identically zero
    for name in ("q", "k", "v", "o"):
        init_linear(ps, init, f"{prefix}.{name}", width, width, bias=name != "k")


def attention(
    ps: ParamStore,
    prefix: str,
    x: Tensor,
    heads: int,
    bias=None,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
    trace: dict | None = None,
) -> Tensor:
    """Multi-head self-attention over the second-to-last axis of ``x``.

    ``x`` is (..., tokens, width); ``bias`` broadcasts to
    (..., heads, tokens, tokens) and is added to the scaled logits.
    """
    *lead, n, width = x.shape
    if width % heads:
        raise ValueError(f"attention: width {width} not divisible by {heads} heads")
    dh = width // heads

    def split(t):
        t = T.reshape(t, (*lead, n, heads, dh))
        return T.transpose(t, tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2))

    q = split(linear(ps, f"{prefix}.q", x))
    k = split(linear(ps, f"{prefix}.k", x))
    v = split(linear(ps, f"{prefix}.v", x))
    kt = T.transpose(k, tuple(range(len(lead) + 1)) + (len(lead) + 2, len(lead) + 1))
    logits = T.mul(T.matmul(q, kt), 1.0 / np.sqrt(dh))
    if bias is not None:
        logits = T.add(logits, bias)
    probs = T.softmax(logits, axis=-1)
    if trace is not None:
        trace.setdefault(prefix, probs.data)
    probs = T.dropout(probs, dropout, rng)
    ctx = T.matmul(probs, v)  # (..., heads, n, dh)
    ctx = T.transpose(ctx, tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2))
    ctx = T.reshape(ctx, (*lead, n, width))
    return linear(ps, f"{prefix}.o", ctx)


def init_ffn(ps: ParamStore, init: Initializer, prefix: str, width: int, hidden: int) -> None:
    init_linear(ps, init, f"{prefix}.fc1", width, hidden)
    init_linear(ps, init, f"{prefix}.fc2", hidden, width)


def ffn(ps: ParamStore, prefix: str, x, rng=None, dropout: float = 0.0) -> Tensor:
    h = T.gelu(linear(ps, f"{prefix}.fc1", x))
    h = T.dropout(h, dropout, rng)
    return linear(ps, f"{prefix}.fc2", h)


def init_block(ps: ParamStore, init: Initializer, prefix: str, width: int, hidden: int) -> None:
    init_attention(ps, init, f"{prefix}.attn", width)
    init_layer_norm(ps, f"{prefix}.ln1", width)
    init_ffn(ps, init, f"{prefix}.ffn", width, hidden)
    init_layer_norm(ps, f"{prefix}.ln2", width)


def post_ln_block(ps, prefix, x, heads, rng=None, dropout=0.0, bias=None, trace=None) -> Tensor:
    """Encoder layer with normalisation after each residual sum."""
    a = attention(ps, f"{prefix}.attn", x, heads, bias=bias, rng=rng, dropout=dropout, trace=trace)
    x = layer_norm(ps, f"{prefix}.ln1", T.add(x, T.dropout(a, dropout, rng)))
    f = ffn(ps, f"{prefix}.ffn", x, rng, dropout)
    return layer_norm(ps, f"{prefix}.ln2", T.add(x, T.dropout(f, dropout, rng)))


def pre_ln_block(ps, prefix, x, heads, rng=None, dropout=0.0, bias=None, trace=None) -> Tensor:
    """Encoder layer with normalisation before attention and feed-forward."""
    y = layer_norm(ps, f"{prefix}.ln1", x)
    y = attention(ps, f"{prefix}.attn", y, heads, bias=bias, rng=rng, dropout=dropout, trace=trace)
    x = T.add(x, T.dropout(y, dropout, rng))
    y = ffn(ps, f"{prefix}.ffn", layer_norm(ps, f"{prefix}.ln2", x), rng, dropout)
    return T.add(x, T.dropout(y, dropout, rng))
