"""Split token sequences into fixed-length, CLS-led chunks.

Each chunk is ``[CLS] + payload + [PAD]...`` with ``c - 1`` payload slots.
Anything past the chunk budget is dropped from the tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tokenizer import CLS, PAD

MAX_SLOTS = 512


@dataclass(frozen=True)
class ChunkPlan:
    chunk_size: int = 256
    k_ctx: int = 32
    k_resp: int = 8

    def __post_init__(self):
        if self.chunk_size < 4:
            raise ValueError("chunk_size must be at least 4")
        if self.k_ctx < 1 or self.k_resp < 1:
            raise ValueError("chunk budgets must be positive")
        if self.k_ctx + self.k_resp > MAX_SLOTS:
            raise ValueError(f"k_ctx + k_resp must not exceed {MAX_SLOTS}")

    @property
    def n_chunks(self) -> int:
        return self.k_ctx + self.k_resp

    @property
    def payload(self) -> int:
        return self.chunk_size - 1


@dataclass
class ChunkedPair:
    ctx_chunks: np.ndarray  # [k_ctx, c] int64
    resp_chunks: np.ndarray  # [k_resp, c] int64
    ctx_token_mask: np.ndarray  # [k_ctx, c] bool
    resp_token_mask: np.ndarray  # [k_resp, c] bool
    chunk_mask: np.ndarray  # [k_ctx + k_resp] bool

    @property
    def chunks(self) -> np.ndarray:
        return np.concatenate([self.ctx_chunks, self.resp_chunks])

    @property
    def token_mask(self) -> np.ndarray:
        return np.concatenate([self.ctx_token_mask, self.resp_token_mask])


class EmptyResponseError(ValueError):
    pass


def chunk_tokens(tokens, c: int, max_chunks: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Returns ``(chunks [max_chunks, c], token_masks, used_chunks)``."""
    if c < 4:
        raise ValueError("chunk size must be at least 4")
    cap = c - 1
    tokens = list(tokens)[: max_chunks * cap]
    used = min(math.ceil(len(tokens) / cap), max_chunks)
    chunks = np.full((max_chunks, c), PAD, dtype=np.int64)
    masks = np.zeros((max_chunks, c), dtype=bool)
    chunks[:, 0] = CLS
    masks[:, 0] = True
    for i in range(used):
        payload = tokens[i * cap : (i + 1) * cap]
        chunks[i, 1 : 1 + len(payload)] = payload
        masks[i, 1 : 1 + len(payload)] = True
    return chunks, masks, used


def make_pair(context_ids, response_ids, plan: ChunkPlan) -> ChunkedPair:
    if len(response_ids) == 0:
        raise EmptyResponseError("a response must contain at least one token")
    ctx, ctx_mask, n_ctx = chunk_tokens(context_ids, plan.chunk_size, plan.k_ctx)
    resp, resp_mask, n_resp = chunk_tokens(response_ids, plan.chunk_size, plan.k_resp)
    chunk_mask = np.zeros(plan.n_chunks, dtype=bool)
    chunk_mask[:n_ctx] = True
    chunk_mask[plan.k_ctx : plan.k_ctx + n_resp] = True
    return ChunkedPair(ctx, resp, ctx_mask, resp_mask, chunk_mask)


def payload_tokens(chunks: np.ndarray, token_masks: np.ndarray) -> list[int]:
    """Concatenate the real payload ids of ``chunks`` (drops CLS and PAD)."""
    return [int(t) for row, m in zip(chunks, token_masks) for t in row[1:][m[1:]]]
