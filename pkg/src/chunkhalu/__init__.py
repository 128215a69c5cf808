"""Long-context hallucination detection by chunk decomposition and attention aggregation."""

from .aggregator import AggregationOutput, aggregate, predict
from .chunker import ChunkedPair, ChunkPlan, chunk_tokens, make_pair
from .encoder import EncoderConfig, EncoderWeights, encode_chunk, encode_pair
from .model import Detector
from .tensor import Tape, Tensor, finite_difference_check
from .tokenizer import Vocab, build_vocab

__version__ = "0.1.0"

__all__ = [
    "AggregationOutput",
    "ChunkPlan",
    "ChunkedPair",
    "Detector",
    "EncoderConfig",
    "EncoderWeights",
    "Tape",
    "Tensor",
    "Vocab",
    "aggregate",
    "build_vocab",
    "chunk_tokens",
    "encode_chunk",
    "encode_pair",
    "finite_difference_check",
    "make_pair",
    "predict",
]
