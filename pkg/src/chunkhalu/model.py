"""The full detector: chunk encoder followed by the chunk aggregator."""

from __future__ import annotations

import numpy as np

from .aggregator import AggregationOutput, AggregatorConfig, AggregatorWeights, aggregate
from .chunker import ChunkedPair, ChunkPlan, make_pair
from .encoder import EncoderConfig, EncoderWeights, encode_batch
from .tensor import Tensor
from .tokenizer import Vocab


class Detector:
    def __init__(
        self,
        plan: ChunkPlan,
        encoder: EncoderWeights,
        aggregator: AggregatorWeights,
        vocab: Vocab | None = None,
    ):
        if encoder.config.max_positions < plan.chunk_size:
            raise ValueError("encoder max_positions is smaller than the chunk size")
        agg = aggregator.config
        if (agg.k_ctx, agg.k_resp, agg.d_model) != (plan.k_ctx, plan.k_resp, encoder.config.d_model):
            raise ValueError("aggregator config does not match the chunk plan / encoder width")
        self.plan = plan
        self.encoder = encoder
        self.aggregator = aggregator
        self.vocab = vocab

    @classmethod
    def init(
        cls,
        plan: ChunkPlan,
        encoder_config: EncoderConfig,
        seed: int = 0,
        vocab: Vocab | None = None,
        **aggregator_options,
    ) -> "Detector":
        rng = np.random.default_rng(seed)
        encoder = EncoderWeights.init(encoder_config, rng)
        agg_cfg = AggregatorConfig(
            d_model=encoder_config.d_model,
            k_ctx=plan.k_ctx,
            k_resp=plan.k_resp,
            n_heads=aggregator_options.pop("n_heads", encoder_config.n_heads),
            dropout=aggregator_options.pop("dropout", encoder_config.dropout),
            init_std=aggregator_options.pop("init_std", encoder_config.init_std),
            **aggregator_options,
        )
        return cls(plan, encoder, AggregatorWeights.init(agg_cfg, rng), vocab)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [("encoder." + n, t) for n, t in self.encoder.named_parameters()] + [
            ("aggregator." + n, t) for n, t in self.aggregator.named_parameters()
        ]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def prepare(self, context: str, response: str) -> ChunkedPair:
        if self.vocab is None:
            raise ValueError("detector has no vocab attached")
        return make_pair(self.vocab.encode(context), self.vocab.encode(response), self.plan)

    def forward(
        self, pairs: list[ChunkedPair], training: bool = False, rng: np.random.Generator | None = None
    ) -> AggregationOutput:
        reps = encode_batch(self.encoder, pairs, training, rng)
        k = self.plan.k_ctx
        mask = np.stack([p.chunk_mask for p in pairs])
        return aggregate(self.aggregator, reps[:, :k], reps[:, k:], mask, training, rng)

    def predict_proba(self, pairs: list[ChunkedPair], batch_size: int = 8) -> np.ndarray:
        out = [self.forward(pairs[i : i + batch_size]).probability for i in range(0, len(pairs), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    def score_text(self, context: str, response: str) -> AggregationOutput:
        return self.forward([self.prepare(context, response)])
