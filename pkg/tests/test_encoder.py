import numpy as np
import pytest

from chunkhalu import tensor as T
from chunkhalu.chunker import ChunkPlan, make_pair
from chunkhalu.encoder import (
    EncoderConfig, EncoderWeights, TokenRangeError, encode_batch, encode_chunk, encode_chunks, encode_pair,
    full_attention_forward,
)
from chunkhalu.tokenizer import CLS, PAD


def widen(w, std=0.3, seed=9):
    """Spread weights out so outputs depend visibly on every parameter."""
    rng = np.random.default_rng(seed)
    for name, t in w.params.items():
        if not name.endswith(("_g", "_b")):
            t.data = rng.normal(0.0, std, size=t.shape)
    return w


def tiny(d=8, L=1, H=2, c=6, vocab=20, seed=0):
    cfg = EncoderConfig(vocab_size=vocab, d_model=d, n_layers=L, n_heads=H, d_ffn=16, max_positions=c, dropout=0.0)
    return widen(EncoderWeights.init(cfg, np.random.default_rng(seed)))


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(vocab_size=10, d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(vocab_size=10, dropout=1.0)


def test_pad_invariance():
    w = tiny()
    mask = np.array([True, True, True, False, False, False])
    a = encode_chunk(w, [CLS, 7, 8, PAD, PAD, PAD], mask).data
    b = encode_chunk(w, [CLS, 7, 8, 13, 4, 19], mask).data
    np.testing.assert_array_equal(a, b)
    only_cls = encode_chunk(w, [CLS, 5, 5, 5, 5, 5], [True] + [False] * 5).data
    alone = encode_chunk(w, [CLS, PAD, PAD, PAD, PAD, PAD], [True] + [False] * 5).data
    np.testing.assert_array_equal(only_cls, alone)


def test_identical_chunks_identical_outputs():
    w = tiny()
    ids = np.array([[CLS, 5, 6, 7, 8, 9]] * 3)
    out = encode_chunks(w, ids, np.ones_like(ids, bool)).data
    assert out[0].tobytes() == out[1].tobytes() == out[2].tobytes()


def test_attention_rows_sum_to_one():
    w = tiny(L=1)
    probs = []
    mask = np.array([[True, True, True, True, False, False]])
    encode_chunks(w, np.array([[CLS, 5, 6, 7, 0, 0]]), mask, probs_out=probs)
    rows = probs[0]
    np.testing.assert_allclose(rows.sum(-1), 1.0, atol=1e-9)
    assert np.all(rows[..., 4:] == 0.0)


def test_errors():
    w = tiny()
    with pytest.raises(TokenRangeError):
        encode_chunk(w, [CLS, 99, 0, 0, 0, 0], [True] * 6)
    with pytest.raises(ValueError):
        encode_chunk(w, [5, 5, 0, 0, 0, 0], [True] * 6)


def test_encode_pair_zero_rows_for_empty_chunks():
    cfg = EncoderConfig(vocab_size=30, d_model=8, n_layers=1, n_heads=2, d_ffn=16, max_positions=8, dropout=0.0)
    w = widen(EncoderWeights.init(cfg, np.random.default_rng(1)))
    plan = ChunkPlan(8, 5, 3)
    pair = make_pair(list(range(5, 25)), [9, 10], plan)
    ctx, resp = encode_pair(w, pair)
    nonzero = [bool(np.any(r != 0)) for r in np.concatenate([ctx.data, resp.data])]
    assert nonzero == pair.chunk_mask.tolist()
    assert sum(nonzero) == 4


def test_chunk_independence():
    cfg = EncoderConfig(vocab_size=30, d_model=8, n_layers=2, n_heads=2, d_ffn=16, max_positions=8, dropout=0.0)
    w = widen(EncoderWeights.init(cfg, np.random.default_rng(2)))
    plan = ChunkPlan(8, 4, 2)
    a = make_pair(list(range(5, 26)), [9], plan)
    b = make_pair(list(range(5, 19)) + [29] * 7, [9], plan)
    ra, rb = encode_batch(w, [a]).data[0], encode_batch(w, [b]).data[0]
    np.testing.assert_allclose(ra[:2], rb[:2], atol=1e-12)
    assert not np.allclose(ra[2], rb[2])
    both = encode_batch(w, [a, b]).data
    np.testing.assert_allclose(both[0], ra, atol=1e-12)


def test_gradient_check_tiny_encoder():
    cfg = EncoderConfig(vocab_size=12, d_model=8, n_layers=2, n_heads=2, d_ffn=12, max_positions=5, dropout=0.0)
    w = widen(EncoderWeights.init(cfg, np.random.default_rng(3)))
    ids = np.array([[CLS, 5, 6, 7, 0], [CLS, 8, 9, 0, 0]])
    mask = ids != 0
    target = np.random.default_rng(4).normal(size=(2, 8))
    params = [t for _, t in w.named_parameters()]

    def f(_):
        return T.sum_all(T.mul(encode_chunks(w, ids, mask), target))

    assert T.finite_difference_check(f, params, 1e-5) < 1e-4


def test_full_attention_reference_matches_encoder_cls():
    cfg = EncoderConfig(vocab_size=20, d_model=8, n_layers=2, n_heads=2, d_ffn=16, max_positions=10, dropout=0.0)
    w = widen(EncoderWeights.init(cfg, np.random.default_rng(5)))
    ids = np.array([CLS, 5, 6, 7, 8, 9, 10, 11, 12, 13])
    ref = full_attention_forward(w, ids, block=3)
    cls = encode_chunks(w, ids[None], np.ones((1, 10), bool)).data[0]
    np.testing.assert_allclose(ref[0], cls, atol=1e-10)
