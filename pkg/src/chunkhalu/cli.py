"""Command-line entry point: synth, train, eval, score, bench, judge, verify.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
Machine-readable JSON goes to files or stdout; human summaries go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synthesis as S
from .aggregator import predict
from .llm_client import ClientConfig, LLMClient, LLMError, UnparseableVerdict
from .metrics import evaluate, latency_bench, roc_curve, roc_curve_csv
from .perplexity import train_lm, verify_corpus
from .tokenizer import build_vocab
from .training import (
    CheckpointError,
    TrainConfig,
    TrainingError,
    build_detector,
    load_checkpoint,
    prepare_examples,
    save_checkpoint,
    train,
)

log = logging.getLogger("chunkhalu")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _require_file(path: str | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file {path}")
    return p


def _require_dir(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{flag}: no such directory {path}")
    return p


def _writable(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.parent.exists():
        raise UsageError(f"{flag}: parent directory of {path} does not exist")
    return p


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid JSON ({err})") from err


def _write_json(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def _load_examples(path: Path) -> list[S.LabeledExample]:
    try:
        return S.read_examples(path)
    except S.DataFormatError as err:
        raise DataError(f"{path}: {err}") from err


def _table(title: str, rows: dict) -> None:
    print(title, file=sys.stderr)
    for k, v in rows.items():
        print(f"  {k:<22} {v}", file=sys.stderr)


# -- subcommands ------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.toy_corpus is None:
        pairs_path = _require_file(args.pairs, "--pairs")
    out = _writable(args.out, "--out")
    if not 0.0 <= args.p <= 1.0:
        raise UsageError("--p must lie in [0, 1]")
    if args.toy_corpus is not None:
        pairs = S.make_toy_corpus(args.toy_corpus, seed=args.seed, context_tokens=args.toy_context_tokens)
    else:
        try:
            pairs = S.read_pairs(pairs_path)
        except S.DataFormatError as err:
            raise DataError(f"{pairs_path}: {err}") from err

    if args.injector == "llm":
        cfg = ClientConfig.from_dict(_read_json(_require_file(args.client_config, "--client-config")))
        injector = S.LLMInjector(LLMClient(cfg, temperature=cfg.injection_temperature))
        workers = cfg.max_in_flight
    else:
        injector, workers = S.RuleInjector(), 1
    examples = S.synthesize_dataset(pairs, args.p, args.seed, injector, max_workers=workers)
    S.write_jsonl(examples, out)

    stats = {"all": S.dataset_stats(examples)}
    if args.split:
        ratios = tuple(float(x) for x in args.split.split(","))
        splits = S.split_dataset(examples, ratios, args.seed)
        for name, part in zip(("train", "dev", "test"), splits):
            S.write_jsonl(part, out.with_name(f"{out.stem}.{name}{out.suffix}"))
            stats[name] = S.dataset_stats(part)
    _write_json(stats, out.with_name(out.name + ".stats.json"))
    for name, st in stats.items():
        _table(f"[{name}]", {"examples": st["count"], "hallucinated %": f"{st['hallucinated_pct']:.1f}",
                             "baseless": st["baseless"], "contradictory": st["contradictory"]})
    return EXIT_OK


def cmd_train(args) -> int:
    data = _require_file(args.data, "--data")
    cfg_path = _require_file(args.config, "--config")
    dev_path = _require_file(args.dev, "--dev") if args.dev else None
    out = Path(args.out)
    raw = _read_json(cfg_path)
    dev_fraction = raw.pop("dev_fraction", 0.1)
    try:
        cfg = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as err:
        raise UsageError(f"--config: {err}") from err
    out.mkdir(parents=True, exist_ok=True)

    examples = _load_examples(data)
    if dev_path:
        train_ex, dev_ex = examples, _load_examples(dev_path)
    elif dev_fraction:
        order = np.random.default_rng(cfg.seed).permutation(len(examples))
        n_dev = max(1, int(round(len(examples) * dev_fraction)))
        dev_ex = [examples[i] for i in order[:n_dev]]
        train_ex = [examples[i] for i in order[n_dev:]]
    else:
        train_ex, dev_ex = examples, []
    if cfg.train_subset_size is not None:
        train_ex = train_ex[: cfg.train_subset_size]
    if not train_ex:
        raise DataError("no training examples")

    vocab = build_vocab([e.context for e in train_ex] + [e.response for e in train_ex], cfg.max_vocab)
    detector = build_detector(vocab, cfg)
    try:
        pairs, targets = prepare_examples(train_ex, detector)
        dev = prepare_examples(dev_ex, detector) if dev_ex else None
    except ValueError as err:
        raise DataError(str(err)) from err

    history_path = out / "history.jsonl"
    history_path.write_text("", encoding="utf-8")

    def on_epoch(rec):
        with open(history_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        dev_auc = rec.get("dev", {}).get("roc_auc")
        print(f"epoch {rec['epoch']} step {rec['step']} loss {rec['train_loss']:.4f} dev_auc {dev_auc}", file=sys.stderr)

    result = train(detector, pairs, targets, cfg, dev=dev, on_epoch=on_epoch)
    best = result.history[result.best_epoch] if result.best_epoch is not None else (result.history[-1] if result.history else {})
    save_checkpoint(
        result.detector,
        out,
        {"train_config": cfg.to_dict(), "step": result.steps, "best_epoch": result.best_epoch,
         "metrics": best.get("dev", {})},
    )
    return EXIT_OK


def _report_dict(report, threshold: float) -> dict:
    d = report.to_dict()
    d["threshold"] = threshold
    return d


def cmd_eval(args) -> int:
    data = _require_file(args.data, "--data")
    ckpt = _require_dir(args.ckpt, "--ckpt")
    report_path = _writable(args.report, "--report")
    detector, _ = load_checkpoint(ckpt)
    examples = _load_examples(data)
    if not examples:
        raise DataError("no examples to evaluate")
    pairs, targets = prepare_examples(examples, detector)
    scores = detector.predict_proba(pairs, batch_size=args.batch)
    report = evaluate(targets, scores, threshold=args.threshold)
    if report.roc_auc is None:
        log.warning("only one class present; roc_auc reported as null")
    _write_json(_report_dict(report, args.threshold), report_path)
    if args.roc_csv:
        if report.roc_auc is not None:
            Path(args.roc_csv).write_text(roc_curve_csv(roc_curve(scores, targets)), encoding="utf-8")
        else:
            log.warning("skipping ROC curve: only one class present")
    _table("[eval]", {k: v for k, v in report.to_dict().items() if k != "extra"})
    return EXIT_OK


def cmd_score(args) -> int:
    ckpt = _require_dir(args.ckpt, "--ckpt")
    context = _require_file(args.context, "--context").read_text(encoding="utf-8")
    response = _require_file(args.response, "--response").read_text(encoding="utf-8")
    thresholds = [args.threshold]
    if args.sweep:
        thresholds = sorted(float(t) for t in args.sweep.split(","))
    if any(not 0 < t < 1 for t in thresholds):
        raise UsageError("thresholds must lie in (0, 1)")
    detector, _ = load_checkpoint(ckpt)
    try:
        out = detector.score_text(context, response)
    except ValueError as err:
        raise DataError(str(err)) from err
    prob = float(out.probability[0])
    result = {"probability": prob, "logit": float(out.logit.data[0])}
    if args.sweep:
        result["sweep"] = [{"threshold": t, "label": predict(prob, t)} for t in thresholds]
    else:
        result["label"] = predict(prob, args.threshold)
    if args.attention_csv:
        att = out.head_mean_attention(0)
        Path(args.attention_csv).write_text(
            "\n".join(",".join(repr(float(v)) for v in row) for row in att) + "\n", encoding="utf-8"
        )
    _write_json(result, None)
    return EXIT_OK


def cmd_bench(args) -> int:
    ckpt = _require_dir(args.ckpt, "--ckpt")
    data = _require_file(args.data, "--data")
    detector, _ = load_checkpoint(ckpt)
    examples = _load_examples(data)
    if args.limit:
        examples = examples[: args.limit]
    pairs, _ = prepare_examples(examples, detector)
    if len(pairs) < args.batch:
        raise DataError(f"need at least {args.batch} examples for one batch")
    report = latency_bench(detector.forward, pairs, args.batch, args.warmup, args.iters)
    _write_json(report, Path(args.report) if args.report else None)
    _table("[bench]", {"samples/sec": f"{report['samples_per_sec']:.2f} ± {report['samples_per_sec_std']:.2f}"})
    return EXIT_OK


def cmd_judge(args) -> int:
    data = _require_file(args.data, "--data")
    cfg = ClientConfig.from_dict(_read_json(_require_file(args.client_config, "--client-config")))
    report_path = _writable(args.report, "--report")
    examples = _load_examples(data)
    client = LLMClient(cfg)
    verdicts, preds, labels = [], [], []
    for ex in examples:
        try:
            v = client.judge(ex.context, ex.response)
        except UnparseableVerdict as err:
            log.warning("unparseable verdict for %s", ex.id)
            verdicts.append({"id": ex.id, "label": None, "reply": err.reply, "truncated": False})
            continue
        verdicts.append({"id": ex.id, "label": v.label, "reply": v.reply, "truncated": v.truncated})
        preds.append(int(v.label == S.HALLUCINATED))
        labels.append(ex.target)
    result = {"verdicts": verdicts, "unparseable": sum(v["label"] is None for v in verdicts)}
    if preds:
        result["metrics"] = evaluate(labels, predictions=preds).to_dict()
    _write_json(result, report_path)
    if preds:
        _table("[judge]", {k: v for k, v in result["metrics"].items() if k != "extra"})
    return EXIT_OK


def _read_texts(path: Path) -> list[str]:
    """JSONL examples (their ``response``) or pairs (``reference``), else one text per line."""
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    out = []
    for ln in lines:
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            text = obj.get("response", obj.get("reference", obj.get("text")))
            if not isinstance(text, str):
                raise DataError(f"{path}: JSON line without response/reference/text")
            out.append(text)
        else:
            out.append(ln)
    return out


def cmd_verify(args) -> int:
    originals = _read_texts(_require_file(args.originals, "--originals"))
    injected = _read_texts(_require_file(args.injected, "--injected"))
    if not originals or not injected:
        raise DataError("both files need at least one text")
    corpus = _read_texts(_require_file(args.lm_corpus, "--lm-corpus")) if args.lm_corpus else originals + injected
    lm = train_lm(corpus, order=args.order, k=args.k)
    rows = verify_corpus(lm, originals, injected)
    _write_json(rows, Path(args.out) if args.out else None)
    for r in rows:
        _table(f"[{r['group']}]", {"count": r["count"], "mean ppl": f"{r['mean_ppl']:.3f}",
                                   "median ppl": f"{r['median_ppl']:.3f}", "delta": f"{r['delta']:+.3f}"})
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chunkhalu", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="build a labeled dataset by injecting hallucinations")
    p.add_argument("--pairs", help="JSONL of {id, context, reference}")
    p.add_argument("--toy-corpus", type=int, metavar="N", help="generate N synthetic pairs instead")
    p.add_argument("--toy-context-tokens", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--injector", choices=("rule", "llm"), default="rule")
    p.add_argument("--client-config")
    p.add_argument("--split", help="train,dev,test ratios, e.g. 0.8,0.1,0.1")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fine-tune the detector")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics report for a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--roc-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score one (context, response) pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sweep", help="comma-separated thresholds")
    p.add_argument("--attention-csv", help="dump head-averaged aggregator attention")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("bench", help="inference throughput in samples/sec")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--limit", type=int)
    p.add_argument("--report")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("judge", help="LLM-judge baseline over a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--client-config", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("verify", help="perplexity of original vs injected summaries")
    p.add_argument("--originals", required=True)
    p.add_argument("--injected", required=True)
    p.add_argument("--lm-corpus")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--k", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, S.DataFormatError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, CheckpointError, LLMError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
