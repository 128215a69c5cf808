import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chunkhalu import tensor as T
from chunkhalu.aggregator import (
    FAITHFUL, HALLUCINATED, AggregatorConfig, AggregatorWeights, NothingToClassifyError, aggregate, predict,
)
from chunkhalu.tensor import Tensor


def setup(pooling="cls", with_ffn=False, seed=0):
    cfg = AggregatorConfig(d_model=8, k_ctx=3, k_resp=2, n_heads=2, pooling=pooling, with_ffn=with_ffn,
                           d_ffn=12, dropout=0.0)
    w = AggregatorWeights.init(cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    for name, t in w.params.items():
        if not name.endswith(("_g", "_b")) or name == "head_b":
            t.data = rng.normal(0.0, 0.3, size=t.shape)
    ctx = rng.normal(size=(3, 8))
    resp = rng.normal(size=(2, 8))
    return w, ctx, resp


def test_masked_slots_get_no_attention():
    w, ctx, resp = setup()
    mask = np.array([True, False, True, True, False])
    out = aggregate(w, Tensor(ctx), Tensor(resp), mask)
    att = out.attention[0]
    # slot layout: CLS, c0, c1, c2, SEP, r0, r1
    assert np.all(att[..., 2] < 1e-12) and np.all(att[..., 6] < 1e-12)
    np.testing.assert_allclose(att.sum(-1), 1.0, atol=1e-9)


def test_masked_slot_contents_do_not_matter():
    w, ctx, resp = setup()
    mask = np.array([True, False, True, True, False])
    a = aggregate(w, Tensor(ctx), Tensor(resp), mask).logit.data
    ctx2, resp2 = ctx.copy(), resp.copy()
    ctx2[1], resp2[1] = resp[1] * 7, ctx[1] - 3
    b = aggregate(w, Tensor(ctx2), Tensor(resp2), mask).logit.data
    assert a.tobytes() == b.tobytes()


def test_constant_head():
    w, ctx, resp = setup()
    w.params["head_w"].data[:] = 0.0
    w.params["head_b"].data[:] = 0.7
    out = aggregate(w, Tensor(ctx), Tensor(resp), np.ones(5, bool))
    np.testing.assert_allclose(out.probability, 1 / (1 + np.exp(-0.7)))


def test_probability_is_sigmoid_of_logit():
    w, ctx, resp = setup()
    out = aggregate(w, Tensor(ctx), Tensor(resp), np.ones(5, bool))
    np.testing.assert_allclose(out.probability, 1 / (1 + np.exp(-out.logit.data)), rtol=1e-12)


def test_segment_embeddings_break_symmetry():
    w, ctx, resp = setup()
    mask = np.ones(5, bool)
    a = aggregate(w, Tensor(ctx), Tensor(resp), mask).logit.data
    ctx2, resp2 = ctx.copy(), resp.copy()
    ctx2[0], resp2[0] = resp[0], ctx[0]
    b = aggregate(w, Tensor(ctx2), Tensor(resp2), mask).logit.data
    assert not np.allclose(a, b)


def test_all_masked_error():
    w, ctx, resp = setup()
    with pytest.raises(NothingToClassifyError):
        aggregate(w, Tensor(ctx), Tensor(resp), np.zeros(5, bool))


def test_shape_errors():
    w, ctx, resp = setup()
    with pytest.raises(T.ShapeError):
        aggregate(w, Tensor(ctx[:, :4]), Tensor(resp[:, :4]), np.ones(5, bool))
    with pytest.raises(T.ShapeError):
        aggregate(w, Tensor(ctx), Tensor(resp), np.ones(6, bool))


def test_batched_matches_single():
    w, ctx, resp = setup()
    m1, m2 = np.ones(5, bool), np.array([True, True, False, True, False])
    batch = aggregate(w, Tensor(np.stack([ctx, ctx * 0.5])), Tensor(np.stack([resp, resp])), np.stack([m1, m2]))
    one = aggregate(w, Tensor(ctx * 0.5), Tensor(resp), m2)
    np.testing.assert_allclose(batch.logit.data[1], one.logit.data[0], atol=1e-12)


@pytest.mark.parametrize("pooling,with_ffn", [("cls", False), ("mean", False), ("cls", True)])
def test_gradient_check(pooling, with_ffn):
    w, ctx, resp = setup(pooling, with_ffn)
    c, r = Tensor(ctx), Tensor(resp)
    mask = np.array([True, True, False, True, True])
    params = [t for _, t in w.named_parameters()] + [c, r]

    def f(_):
        return T.bce_with_logits(aggregate(w, c, r, mask).logit, np.array([1.0]))

    assert T.finite_difference_check(f, params, 1e-5) < 1e-4


def test_predict_boundaries():
    assert predict(0.5) == HALLUCINATED
    assert predict(0.49) == FAITHFUL
    with pytest.raises(ValueError):
        predict(0.3, threshold=1.0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 0.98), st.floats(0.0, 0.5))
def test_threshold_sweep_nested(scores, t1, gap):
    t2 = min(t1 + gap, 0.99)
    hi = {i for i, l in enumerate(predict(np.array(scores), t2)) if l == HALLUCINATED}
    lo = {i for i, l in enumerate(predict(np.array(scores), t1)) if l == HALLUCINATED}
    assert hi <= lo
