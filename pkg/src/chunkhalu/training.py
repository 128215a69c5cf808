"""Fine-tuning loop, optimizer, learning-rate schedule and checkpoints."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .aggregator import AggregatorConfig, AggregatorWeights
from .chunker import ChunkedPair, ChunkPlan
from .encoder import EncoderConfig, EncoderWeights
from .metrics import evaluate
from .model import Detector
from .tensor import Tape, Tensor
from .tokenizer import Vocab

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "weights.bin"
VOCAB = "vocab.txt"


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class IntegrityError(CheckpointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 2e-6
    weight_decay: float = 0.1
    warmup_steps: int = 1000
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    train_subset_size: int | None = None
    schedule: str = "constant"  # or "cosine"
    grad_clip: float | None = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    threshold: float = 0.5
    plan: ChunkPlan = field(default_factory=ChunkPlan)
    encoder: dict = field(default_factory=dict)
    aggregator: dict = field(default_factory=dict)
    max_vocab: int = 30000

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.warmup_steps < 0 or self.epochs < 0:
            raise ValueError("warmup_steps and epochs must be non-negative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if isinstance(self.plan, dict):
            self.plan = ChunkPlan(**self.plan)
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def lr_at(step: int, cfg: TrainConfig, total_steps: int | None = None) -> float:
    """Linear warmup to ``cfg.lr`` over ``warmup_steps``, then constant (or cosine)."""
    if cfg.warmup_steps and step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if cfg.schedule == "cosine" and total_steps:
        span = max(1, total_steps - cfg.warmup_steps)
        frac = min(1.0, (step - cfg.warmup_steps) / span)
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    return cfg.lr


class AdamW:
    """Adam moments with weight decay decoupled from the gradient.

    Decay applies to matrices only (biases, gains and vectors are exempt) and
    is scaled by the step's learning rate.
    """

    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data -= lr * update

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


@dataclass
class TrainResult:
    detector: Detector
    history: list[dict]
    best_epoch: int | None
    steps: int


def prepare_examples(examples, detector: Detector) -> tuple[list[ChunkedPair], np.ndarray]:
    pairs = [detector.prepare(e.context, e.response) for e in examples]
    return pairs, np.array([e.target for e in examples], dtype=float)


def _snapshot(detector: Detector) -> list[np.ndarray]:
    return [p.data.copy() for p in detector.parameters()]


def _restore(detector: Detector, snap: list[np.ndarray]) -> None:
    for p, s in zip(detector.parameters(), snap):
        p.data[...] = s


def train(
    detector: Detector,
    pairs: Sequence[ChunkedPair],
    targets: Sequence[float],
    cfg: TrainConfig,
    dev: tuple[Sequence[ChunkedPair], Sequence[float]] | None = None,
    on_epoch: Callable[[dict], None] | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Minimise mean BCE on ``pairs``; keeps the best-dev weights when ``dev`` is given."""
    targets = np.asarray(targets, dtype=float)
    if len(pairs) == 0:
        raise TrainingError("training set is empty")
    if not np.isin(targets, (0.0, 1.0)).all():
        raise TrainingError("targets must be binary")
    if cfg.train_subset_size is not None:
        pairs, targets = list(pairs[: cfg.train_subset_size]), targets[: cfg.train_subset_size]

    params = detector.parameters()
    opt = AdamW(params, cfg.betas, cfg.adam_eps, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n_batches = math.ceil(len(pairs) / cfg.batch_size)
    total_steps = n_batches * cfg.epochs
    history: list[dict] = []
    best, best_epoch, best_snap = -math.inf, None, None
    step = 0

    for epoch in range(cfg.epochs):
        order = epoch_order(len(pairs), cfg.seed, epoch)
        losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                out = detector.forward([pairs[i] for i in idx], training=True, rng=rng)
                loss = T.bce_with_logits(out.logit, targets[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b} (examples {idx.tolist()})")
            tape.backward(loss)
            if cfg.grad_clip:
                clip_grad_norm(params, cfg.grad_clip)
            step += 1
            opt.step(lr_at(step, cfg, total_steps))
            losses.append(value)
            if max_steps is not None and step >= max_steps:
                break

        record = {"epoch": epoch, "step": step, "train_loss": float(np.mean(losses))}
        if dev is not None and len(dev[0]):
            scores = detector.predict_proba(list(dev[0]))
            report = evaluate(dev[1], scores, threshold=cfg.threshold)
            record["dev"] = report.to_dict()
            key = report.roc_auc if report.roc_auc is not None else report.balanced_accuracy
            if key > best:
                best, best_epoch, best_snap = key, epoch, _snapshot(detector)
        history.append(record)
        log.info("epoch %d step %d loss %.4f", epoch, step, record["train_loss"])
        if on_epoch:
            on_epoch(record)
        if max_steps is not None and step >= max_steps:
            break

    if best_snap is not None:
        _restore(detector, best_snap)
    return TrainResult(detector, history, best_epoch, step)


# -- checkpoints ----------------------------------------------------------------------


def _model_config(detector: Detector) -> dict:
    return {
        "plan": asdict(detector.plan),
        "encoder": detector.encoder.config.to_dict(),
        "aggregator": detector.aggregator.config.to_dict(),
    }


def save_checkpoint(detector: Detector, path, manifest: dict | None = None) -> Path:
    """Write ``manifest.json`` + ``weights.bin`` (little-endian float64) [+ ``vocab.txt``]."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    registry, chunks, offset = [], [], 0
    for name, t in detector.named_parameters():
        blob = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        registry.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    data = b"".join(chunks)
    (path / BLOB).write_bytes(data)
    if detector.vocab is not None:
        detector.vocab.save(path / VOCAB)
    full = {
        "format_version": FORMAT_VERSION,
        "model": _model_config(detector),
        "tensors": registry,
        "blob_bytes": len(data),
        "blob_sha256": hashlib.sha256(data).hexdigest(),
        "has_vocab": detector.vocab is not None,
    }
    full.update(copy.deepcopy(manifest or {}))
    (path / MANIFEST).write_text(json.dumps(full, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[Detector, dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError as err:
        raise CheckpointError(f"no manifest in {path}") from err
    except json.JSONDecodeError as err:
        raise IntegrityError(f"manifest is not valid JSON: {err}") from err
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    data = (path / BLOB).read_bytes()
    if len(data) != manifest["blob_bytes"]:
        raise IntegrityError(f"weight blob has {len(data)} bytes, manifest says {manifest['blob_bytes']}")
    if hashlib.sha256(data).hexdigest() != manifest["blob_sha256"]:
        raise IntegrityError("weight blob checksum mismatch")

    cfg = manifest["model"]
    vocab = Vocab.load(path / VOCAB) if manifest.get("has_vocab") else None
    plan = ChunkPlan(**cfg["plan"])
    enc_cfg = EncoderConfig(**cfg["encoder"])
    agg_cfg = AggregatorConfig(**cfg["aggregator"])
    rng = np.random.default_rng(0)
    detector = Detector(plan, EncoderWeights.init(enc_cfg, rng), AggregatorWeights.init(agg_cfg, rng), vocab)
    params = dict(detector.named_parameters())
    if [e["name"] for e in manifest["tensors"]] != list(params):
        raise IntegrityError("tensor registry does not match the model layout")
    for entry in manifest["tensors"]:
        t = params[entry["name"]]
        if tuple(entry["shape"]) != t.shape or entry["nbytes"] != t.size * 8:
            raise IntegrityError(f"tensor {entry['name']} does not match its manifest entry")
        raw = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        t.data = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(t.shape)
    return detector, manifest


def build_detector(vocab: Vocab, cfg: TrainConfig) -> Detector:
    enc_opts = {"max_positions": cfg.plan.chunk_size, **cfg.encoder}
    enc_cfg = EncoderConfig(vocab_size=vocab.size, **enc_opts)
    return Detector.init(cfg.plan, enc_cfg, seed=cfg.seed, vocab=vocab, **dict(cfg.aggregator))
