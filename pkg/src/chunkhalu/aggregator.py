"""Attention over chunk CLS vectors, pooled into one hallucination logit.

The slot sequence is ``[global CLS, context chunks..., SEP, response chunks...]``.
Learned slot-position and segment embeddings are added before a single
multi-head attention block (attention, residual, layer norm). The transformed
global-CLS slot is the pooled representation fed to a linear head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import layers
from . import tensor as T
from .tensor import Tensor

FAITHFUL = "faithful"
HALLUCINATED = "hallucinated"

SEG_CONTEXT, SEG_RESPONSE, SEG_SPECIAL = 0, 1, 2


class NothingToClassifyError(ValueError):
    """Every chunk slot of an example is masked."""


@dataclass(frozen=True)
class AggregatorConfig:
    d_model: int
    k_ctx: int
    k_resp: int
    n_heads: int = 4
    pooling: str = "cls"  # "cls" or "mean"
    with_ffn: bool = False
    d_ffn: int = 256
    dropout: float = 0.1
    ln_eps: float = 1e-5
    init_std: float = layers.INIT_STD

    def __post_init__(self):
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.pooling not in ("cls", "mean"):
            raise ValueError(f"unknown pooling {self.pooling!r}")

    @property
    def n_slots(self) -> int:
        return self.k_ctx + self.k_resp + 2

    def to_dict(self) -> dict:
        return asdict(self)


class AggregatorWeights:
    def __init__(self, config: AggregatorConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: AggregatorConfig, rng: np.random.Generator) -> "AggregatorWeights":
        d, std = config.d_model, config.init_std
        p = {
            "cls": layers.normal(rng, (d,), std),
            "sep": layers.normal(rng, (d,), std),
            "slot_pos": layers.normal(rng, (config.n_slots, d), std),
            "segment": layers.normal(rng, (3, d), std),
        }
        p.update(layers.attention_params(rng, d, "attn_", std))
        p.update(layers.norm_params(d, "ln1_"))
        if config.with_ffn:
            p.update(layers.ffn_params(rng, d, config.d_ffn, "ffn_", std))
            p.update(layers.norm_params(d, "ln2_"))
        p["head_w"] = layers.normal(rng, (d, 1), std)
        p["head_b"] = layers.zeros((1,))
        return cls(config, p)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())


@dataclass
class AggregationOutput:
    logit: Tensor  # [B]
    probability: np.ndarray  # [B]
    attention: np.ndarray  # [B, heads, S, S]

    def head_mean_attention(self, index: int = 0) -> np.ndarray:
        return self.attention[index].mean(axis=0)


def slot_segments(k_ctx: int, k_resp: int) -> np.ndarray:
    return np.array(
        [SEG_SPECIAL] + [SEG_CONTEXT] * k_ctx + [SEG_SPECIAL] + [SEG_RESPONSE] * k_resp
    )


def slot_mask(chunk_mask: np.ndarray, k_ctx: int) -> np.ndarray:
    """[B, K] chunk mask -> [B, K + 2] slot mask with CLS and SEP always on."""
    B = chunk_mask.shape[0]
    on = np.ones((B, 1), dtype=bool)
    return np.concatenate([on, chunk_mask[:, :k_ctx], on, chunk_mask[:, k_ctx:]], axis=1)


def aggregate(
    w: AggregatorWeights,
    ctx_reps: Tensor,
    resp_reps: Tensor,
    chunk_mask,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> AggregationOutput:
    """Score a batch ([B, k, d] reps, [B, K] mask) or a single example ([k, d], [K])."""
    cfg, p = w.config, w.params
    chunk_mask = np.asarray(chunk_mask, dtype=bool)
    if ctx_reps.ndim == 2:
        ctx_reps = T.reshape(ctx_reps, (1,) + ctx_reps.shape)
        resp_reps = T.reshape(resp_reps, (1,) + resp_reps.shape)
        chunk_mask = chunk_mask[None]
    B, k_ctx, d = ctx_reps.shape
    k_resp = resp_reps.shape[1]
    if d != cfg.d_model or resp_reps.shape[2] != d:
        raise T.ShapeError(f"rep width {d} does not match d_model {cfg.d_model}")
    if (k_ctx, k_resp) != (cfg.k_ctx, cfg.k_resp) or chunk_mask.shape != (B, k_ctx + k_resp):
        raise T.ShapeError(
            f"expected {cfg.k_ctx}+{cfg.k_resp} chunks, got {k_ctx}+{k_resp} with mask {chunk_mask.shape}"
        )
    if not chunk_mask.any(axis=1).all():
        raise NothingToClassifyError("an example has no non-empty chunks")

    edge = Tensor(np.zeros((B, 1, d)))
    x = T.concat(
        [T.add(edge, p["cls"]), ctx_reps, T.add(edge, p["sep"]), resp_reps], axis=1
    )
    x = T.add(x, p["slot_pos"])
    x = T.add(x, T.embedding(p["segment"], slot_segments(k_ctx, k_resp)))
    x = T.dropout(x, cfg.dropout, rng, training)

    mask = slot_mask(chunk_mask, k_ctx)
    probs: list[np.ndarray] = []
    a = layers.multi_head_attention(
        x, mask, p, "attn_", cfg.n_heads, cfg.dropout, rng, training, probs
    )
    h = layers.norm(T.add(x, T.dropout(a, cfg.dropout, rng, training)), p, "ln1_", cfg.ln_eps)
    if cfg.with_ffn:
        f = layers.feed_forward(h, p, "ffn_")
        h = layers.norm(T.add(h, T.dropout(f, cfg.dropout, rng, training)), p, "ln2_", cfg.ln_eps)

    if cfg.pooling == "cls":
        pooled = h[:, 0, :]
    else:
        weights = mask / mask.sum(axis=1, keepdims=True)
        pooled = T.reshape(T.matmul(Tensor(weights[:, None, :]), h), (B, d))
    logit = T.reshape(layers.linear(pooled, p["head_w"], p["head_b"]), (B,))
    return AggregationOutput(logit, T._sigmoid(logit.data.copy()), probs[0])


def predict(out, threshold: float = 0.5):
    """Label(s) from an :class:`AggregationOutput` or raw probabilities.

    Hallucinated iff probability >= threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    prob = out.probability if isinstance(out, AggregationOutput) else out
    arr = np.asarray(prob, dtype=float)
    labels = np.where(arr >= threshold, HALLUCINATED, FAITHFUL)
    return str(labels) if labels.ndim == 0 else labels.tolist()
