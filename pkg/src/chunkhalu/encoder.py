"""Small pre-norm transformer that turns one chunk into its CLS vector."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import layers
from . import tensor as T
from .chunker import ChunkedPair
from .tensor import Tensor
from .tokenizer import CLS


class TokenRangeError(IndexError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ffn: int = 256
    max_positions: int = 256
    dropout: float = 0.1
    ln_eps: float = 1e-5
    init_std: float = layers.INIT_STD

    def __post_init__(self):
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.vocab_size < 1 or self.n_layers < 1 or self.max_positions < 1:
            raise ValueError("vocab_size, n_layers and max_positions must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderWeights:
    """Named parameter tensors for :func:`encode_chunks`, in a fixed order."""

    def __init__(self, config: EncoderConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> "EncoderWeights":
        d, std = config.d_model, config.init_std
        p = {
            "tok_emb": layers.normal(rng, (config.vocab_size, d), std),
            "pos_emb": layers.normal(rng, (config.max_positions, d), std),
        }
        for i in range(config.n_layers):
            pre = f"layer{i}."
            p.update(layers.norm_params(d, pre + "ln1_"))
            p.update(layers.attention_params(rng, d, pre + "attn_", std))
            p.update(layers.norm_params(d, pre + "ln2_"))
            p.update(layers.ffn_params(rng, d, config.d_ffn, pre + "ffn_", std))
        p.update(layers.norm_params(d, "final_ln_"))
        return cls(config, p)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())


def encode_chunks(
    w: EncoderWeights,
    ids: np.ndarray,
    token_mask: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
    probs_out: list | None = None,
) -> Tensor:
    """Encode a batch of chunks [N, c] and return their CLS vectors [N, d]."""
    cfg, p = w.config, w.params
    ids = np.asarray(ids, dtype=np.int64)
    token_mask = np.asarray(token_mask, dtype=bool)
    if ids.ndim != 2 or token_mask.shape != ids.shape:
        raise T.ShapeError(f"expected matching [N, c] ids and mask, got {ids.shape} and {token_mask.shape}")
    N, c = ids.shape
    if c > cfg.max_positions:
        raise T.ShapeError(f"chunk length {c} exceeds max_positions {cfg.max_positions}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise TokenRangeError(f"token id out of range for vocab of {cfg.vocab_size}")
    if N and not (np.all(ids[:, 0] == CLS) and token_mask[:, 0].all()):
        raise ValueError("every chunk must start with an unmasked CLS token")

    h = T.add(T.embedding(p["tok_emb"], ids), p["pos_emb"][:c])
    h = T.dropout(h, cfg.dropout, rng, training)
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        a = layers.norm(h, p, pre + "ln1_", cfg.ln_eps)
        # only the CLS row feeds the output, so the last layer queries from it alone
        last = i == cfg.n_layers - 1
        if last:
            h = h[:, :1, :]
        a = layers.multi_head_attention(
            a, token_mask, p, pre + "attn_", cfg.n_heads, cfg.dropout, rng, training, probs_out,
            queries=a[:, :1, :] if last else None,
        )
        h = T.add(h, T.dropout(a, cfg.dropout, rng, training))
        f = layers.feed_forward(layers.norm(h, p, pre + "ln2_", cfg.ln_eps), p, pre + "ffn_")
        h = T.add(h, T.dropout(f, cfg.dropout, rng, training))
    return layers.norm(T.reshape(h, (N, cfg.d_model)), p, "final_ln_", cfg.ln_eps)


def encode_chunk(w: EncoderWeights, chunk, token_mask) -> Tensor:
    """CLS vector [d] for a single chunk (inference mode)."""
    return encode_chunks(w, np.asarray(chunk)[None], np.asarray(token_mask)[None])[0]


def encode_pair(
    w: EncoderWeights, pair: ChunkedPair, training: bool = False, rng=None
) -> tuple[Tensor, Tensor]:
    """Context reps [k_ctx, d] and response reps [k_resp, d]; empty chunks give zero rows."""
    reps = encode_batch(w, [pair], training, rng)
    k_ctx = pair.ctx_chunks.shape[0]
    return reps[0, :k_ctx], reps[0, k_ctx:]


def encode_batch(
    w: EncoderWeights, pairs: list[ChunkedPair], training: bool = False, rng=None
) -> Tensor:
    """Encode every non-empty chunk of every pair in one pass; returns [B, K, d]."""
    K = pairs[0].chunk_mask.shape[0]
    ids = np.concatenate([p.chunks[p.chunk_mask] for p in pairs])
    masks = np.concatenate([p.token_mask[p.chunk_mask] for p in pairs])
    slots = np.concatenate([np.flatnonzero(p.chunk_mask) + b * K for b, p in enumerate(pairs)])
    d = w.config.d_model
    if len(ids) == 0:
        return Tensor(np.zeros((len(pairs), K, d)))
    reps = encode_chunks(w, ids, masks, training, rng)
    return T.reshape(T.scatter_rows(reps, slots, len(pairs) * K), (len(pairs), K, d))


def full_attention_forward(w: EncoderWeights, ids: np.ndarray, block: int = 1024) -> np.ndarray:
    """Reference O(n^2) forward: one sequence, every token attends to every token.

    Queries are processed in row blocks so memory stays O(block * n); the
    arithmetic is the same as materialising the full attention matrix.
    Needs ``max_positions >= len(ids)``. Returns the final hidden states [n, d].
    """
    cfg, p = w.config, {k: v.data for k, v in w.params.items()}
    n = len(ids)
    if n > cfg.max_positions:
        raise T.ShapeError(f"sequence of {n} exceeds max_positions {cfg.max_positions}")
    H, d = cfg.n_heads, cfg.d_model
    dh = d // H

    def ln(x, pre):
        mu = x.mean(-1, keepdims=True)
        var = ((x - mu) ** 2).mean(-1, keepdims=True)
        return (x - mu) / np.sqrt(var + cfg.ln_eps) * p[pre + "g"] + p[pre + "b"]

    h = p["tok_emb"][ids] + p["pos_emb"][:n]
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        a = ln(h, pre + "ln1_")
        q, k, v = (
            (a @ p[pre + f"attn_w{x}"] + p[pre + f"attn_b{x}"]).reshape(n, H, dh).transpose(1, 0, 2)
            for x in "qkv"
        )
        out = np.empty((H, n, dh))
        for s in range(0, n, block):
            scores = q[:, s : s + block] @ k.transpose(0, 2, 1) / math.sqrt(dh)
            scores -= scores.max(-1, keepdims=True)
            np.exp(scores, out=scores)
            scores /= scores.sum(-1, keepdims=True)
            out[:, s : s + block] = scores @ v
        ctx = out.transpose(1, 0, 2).reshape(n, d)
        h = h + ctx @ p[pre + "attn_wo"] + p[pre + "attn_bo"]
        f = ln(h, pre + "ln2_") @ p[pre + "ffn_w1"] + p[pre + "ffn_b1"]
        f = 0.5 * f * (1.0 + np.tanh(T.GELU_C * (f + T.GELU_A * f * f * f)))
        h = h + f @ p[pre + "ffn_w2"] + p[pre + "ffn_b2"]
    return ln(h, "final_ln_")
