"""Transformer building blocks shared by the chunk encoder and the aggregator."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

INIT_STD = 0.02


def normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def attention_params(
    rng: np.random.Generator, d: int, prefix: str, std: float = INIT_STD
) -> dict[str, Tensor]:
    params = {}
    for name in ("q", "k", "v", "o"):
        params[f"{prefix}w{name}"] = normal(rng, (d, d), std)
        params[f"{prefix}b{name}"] = zeros((d,))
    return params


def ffn_params(
    rng: np.random.Generator, d: int, d_ffn: int, prefix: str, std: float = INIT_STD
) -> dict[str, Tensor]:
    return {
        f"{prefix}w1": normal(rng, (d, d_ffn), std),
        f"{prefix}b1": zeros((d_ffn,)),
        f"{prefix}w2": normal(rng, (d_ffn, d), std),
        f"{prefix}b2": zeros((d,)),
    }


def norm_params(d: int, prefix: str) -> dict[str, Tensor]:
    return {f"{prefix}g": ones((d,)), f"{prefix}b": zeros((d,))}


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


def multi_head_attention(
    x: Tensor,
    key_mask: np.ndarray,
    p: dict[str, Tensor],
    prefix: str,
    n_heads: int,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
    probs_out: list | None = None,
    queries: Tensor | None = None,
) -> Tensor:
    """Multi-head attention of ``queries`` (default: ``x`` itself) over ``x`` [B, S, d].

    ``key_mask`` [B, S] marks attendable keys.
    """
    B, S, d = x.shape
    dh = d // n_heads
    queries = x if queries is None else queries
    Sq = queries.shape[1]

    def heads(t: Tensor, n: int = S) -> Tensor:
        return T.transpose(T.reshape(t, (B, n, n_heads, dh)), (0, 2, 1, 3))

    q = heads(linear(queries, p[prefix + "wq"], p[prefix + "bq"]), Sq)
    k = heads(linear(x, p[prefix + "wk"], p[prefix + "bk"]))
    v = heads(linear(x, p[prefix + "wv"], p[prefix + "bv"]))
    scores = T.mul(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(dh))
    probs = T.softmax_rows(scores, key_mask[:, None, None, :])
    if probs_out is not None:
        probs_out.append(probs.data)
    probs = T.dropout(probs, dropout, rng, training)
    ctx = T.reshape(T.transpose(T.matmul(probs, v), (0, 2, 1, 3)), (B, Sq, d))
    return linear(ctx, p[prefix + "wo"], p[prefix + "bo"])


def feed_forward(x: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    h = T.gelu(linear(x, p[prefix + "w1"], p[prefix + "b1"]))
    return linear(h, p[prefix + "w2"], p[prefix + "b2"])


def norm(x: Tensor, p: dict[str, Tensor], prefix: str, eps: float) -> Tensor:
    return T.layer_norm(x, p[prefix + "g"], p[prefix + "b"], eps)
