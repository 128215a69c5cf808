import json

import pytest

from mock_llm import MockLLM, completion
from chunkhalu.cli import main

TRAIN_CFG = {
    "lr": 3e-3, "weight_decay": 0.0, "warmup_steps": 2, "epochs": 1, "batch_size": 4, "seed": 0,
    "plan": {"chunk_size": 16, "k_ctx": 4, "k_resp": 3},
    "encoder": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ffn": 32, "dropout": 0.0, "init_std": 0.1},
    "aggregator": {}, "max_vocab": 500, "dev_fraction": 0.2,
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data = d / "data.jsonl"
    assert main(["synth", "--toy-corpus", "24", "--toy-context-tokens", "60", "--p", "0.5", "--seed", "7",
                 "--out", str(data), "--split", "0.5,0.25,0.25"]) == 0
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(TRAIN_CFG))
    assert main(["train", "--data", str(d / "data.train.jsonl"), "--config", str(cfg), "--out", str(d / "ck")]) == 0
    return d


def test_synth_outputs(pipeline):
    lines = (pipeline / "data.jsonl").read_text().splitlines()
    assert len(lines) == 24
    stats = json.loads((pipeline / "data.jsonl.stats.json").read_text())
    assert stats["all"]["count"] == 24
    assert {"train", "dev", "test"} <= set(stats)


def test_synth_deterministic_and_p0(tmp_path, pipeline):
    out = tmp_path / "again.jsonl"
    assert main(["synth", "--toy-corpus", "24", "--toy-context-tokens", "60", "--p", "0.5", "--seed", "7",
                 "--out", str(out)]) == 0
    assert out.read_bytes() == (pipeline / "data.jsonl").read_bytes()
    zero = tmp_path / "zero.jsonl"
    assert main(["synth", "--toy-corpus", "10", "--toy-context-tokens", "40", "--p", "0", "--out", str(zero)]) == 0
    assert json.loads((tmp_path / "zero.jsonl.stats.json").read_text())["all"]["hallucinated_pct"] == 0.0


def test_train_artifacts(pipeline):
    ck = pipeline / "ck"
    assert {"manifest.json", "weights.bin", "vocab.txt", "history.jsonl"} <= {p.name for p in ck.iterdir()}
    hist = [json.loads(l) for l in (ck / "history.jsonl").read_text().splitlines()]
    assert hist and "train_loss" in hist[0]


def test_eval_report(pipeline, tmp_path):
    rep, roc = tmp_path / "r.json", tmp_path / "roc.csv"
    assert main(["eval", "--data", str(pipeline / "data.test.jsonl"), "--ckpt", str(pipeline / "ck"),
                 "--report", str(rep), "--roc-csv", str(roc)]) == 0
    r = json.loads(rep.read_text())
    assert {"precision", "recall", "balanced_accuracy", "mcc", "roc_auc", "counts"} <= set(r)
    assert sum(r["counts"].values()) == 6


def test_eval_one_class(pipeline, tmp_path):
    one = tmp_path / "one.jsonl"
    rows = [l for l in (pipeline / "data.jsonl").read_text().splitlines() if '"faithful"' in l]
    one.write_text("\n".join(rows) + "\n")
    rep = tmp_path / "r.json"
    assert main(["eval", "--data", str(one), "--ckpt", str(pipeline / "ck"), "--report", str(rep)]) == 0
    r = json.loads(rep.read_text())
    assert r["roc_auc"] is None and r["balanced_accuracy"] is not None


def test_score_and_sweep(pipeline, tmp_path, capsys):
    ex = json.loads((pipeline / "data.jsonl").read_text().splitlines()[0])
    (tmp_path / "c.txt").write_text(ex["context"])
    (tmp_path / "r.txt").write_text(ex["response"])
    args = ["score", "--ckpt", str(pipeline / "ck"), "--context", str(tmp_path / "c.txt"),
            "--response", str(tmp_path / "r.txt")]
    capsys.readouterr()
    assert main(args + ["--attention-csv", str(tmp_path / "att.csv")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert 0 <= out["probability"] <= 1 and out["label"] in ("faithful", "hallucinated")
    assert len((tmp_path / "att.csv").read_text().splitlines()) == 4 + 3 + 2
    assert main(args + ["--sweep", "0.9,0.1,0.5"]) == 0
    sweep = json.loads(capsys.readouterr().out)["sweep"]
    flags = [s["label"] == "hallucinated" for s in sweep]
    assert flags == sorted(flags, reverse=True)


def test_bench(pipeline, tmp_path):
    rep = tmp_path / "b.json"
    assert main(["bench", "--ckpt", str(pipeline / "ck"), "--data", str(pipeline / "data.jsonl"), "--batch", "4",
                 "--iters", "2", "--limit", "8", "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["samples_per_sec"] > 0


def test_judge_against_mock(pipeline, tmp_path, monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "k")
    replies = iter(["Unfaithful.", "faithful", "no idea"] * 20)
    script = [(503, "{}"), (429, "{}")]
    with MockLLM(script, default=lambda req: completion(next(replies))) as srv:
        cc = tmp_path / "client.json"
        cc.write_text(json.dumps({"base_url": srv.url, "model": "judge", "backoff_base": 0.01}))
        rep = tmp_path / "j.json"
        assert main(["judge", "--data", str(pipeline / "data.test.jsonl"), "--client-config", str(cc),
                     "--report", str(rep)]) == 0
    r = json.loads(rep.read_text())
    assert len(r["verdicts"]) == 6 and r["unparseable"] == 2
    assert "mcc" in r["metrics"]
    assert len(srv.requests) == 8


def test_verify(pipeline, tmp_path):
    out = tmp_path / "v.json"
    assert main(["verify", "--originals", str(pipeline / "data.jsonl"), "--injected",
                 str(pipeline / "data.jsonl"), "--out", str(out)]) == 0
    rows = json.loads(out.read_text())
    assert rows[1]["delta"] == 0.0


def test_exit_codes(pipeline, tmp_path):
    assert main([]) == 1
    assert main(["synth", "--out", str(tmp_path / "x.jsonl")]) == 1
    assert main(["eval", "--data", str(tmp_path / "nope"), "--ckpt", str(pipeline / "ck"),
                 "--report", str(tmp_path / "r")]) == 1
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "context": "c", "reference": "r"}\n{broken\n')
    assert main(["synth", "--pairs", str(bad), "--out", str(tmp_path / "o.jsonl")]) == 2
    (tmp_path / "ck").mkdir()
    assert main(["eval", "--data", str(pipeline / "data.jsonl"), "--ckpt", str(tmp_path / "ck"),
                 "--report", str(tmp_path / "r")]) == 3


def test_inputs_not_mutated(pipeline, tmp_path):
    before = (pipeline / "data.test.jsonl").read_bytes()
    main(["eval", "--data", str(pipeline / "data.test.jsonl"), "--ckpt", str(pipeline / "ck"),
          "--report", str(tmp_path / "r.json")])
    assert (pipeline / "data.test.jsonl").read_bytes() == before
