"""
Detecting injected hallucinations on a toy corpus
=================================================

Build synthetic (document, summary) pairs, corrupt half of the summaries,
train a small chunked detector and look at what it learned. Runs in a few
minutes on one CPU core.
"""

import numpy as np

from chunkhalu.chunker import ChunkPlan
from chunkhalu.metrics import evaluate
from chunkhalu.perplexity import train_lm, verify_corpus
from chunkhalu.synthesis import make_toy_corpus, split_dataset, synthesize_dataset, dataset_stats
from chunkhalu.tokenizer import build_vocab
from chunkhalu.training import TrainConfig, build_detector, prepare_examples, train

## Data
pairs = make_toy_corpus(400, seed=1, context_tokens=600)
examples = synthesize_dataset(pairs, p=0.5, seed=2)
print(dataset_stats(examples))

hallucinated = next(e for e in examples if e.hallucination_type == "contradictory")
original = next(p for p in pairs if p.id == hallucinated.id)
print("reference:", original.reference[:200])
print("corrupted:", hallucinated.response[:200])

# How fluent are the injected summaries compared with the originals?
lm = train_lm([p.context for p in pairs], order=3, k=0.01)
for row in verify_corpus(lm, [e.reference for e in pairs], [e.response for e in examples]):
    print(row)

## Model
train_ex, dev_ex, test_ex = split_dataset(examples, (0.8, 0.1, 0.1), seed=3)
vocab = build_vocab([e.context for e in train_ex] + [e.response for e in train_ex], 5000)

# From-scratch training wants a larger init and a larger step than fine-tuning.
cfg = TrainConfig(
    lr=1e-3, weight_decay=0.0, warmup_steps=30, epochs=10, batch_size=8,
    plan=ChunkPlan(chunk_size=64, k_ctx=10, k_resp=4),
    encoder=dict(d_model=64, n_layers=2, n_heads=4, d_ffn=128, dropout=0.0, init_std=0.125),
)
detector = build_detector(vocab, cfg)
P, Y = prepare_examples(train_ex, detector)
train(detector, P, Y, cfg, dev=prepare_examples(dev_ex, detector),
      on_epoch=lambda r: print("epoch", r["epoch"], "loss", round(r["train_loss"], 4),
                               "dev auc", r["dev"]["roc_auc"]))

tp, ty = prepare_examples(test_ex, detector)
print(evaluate(ty, detector.predict_proba(tp)).to_dict())

## Where does the global CLS slot look?
out = detector.score_text(hallucinated.context, hallucinated.response)
att = out.head_mean_attention(0)[0]
k = cfg.plan.k_ctx
print("p(hallucinated) =", float(out.probability[0]))
print("attention on context chunks ", np.round(att[1 : k + 1], 3))
print("attention on response chunks", np.round(att[k + 2 :], 3))
