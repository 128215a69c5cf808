"""Hallucination injection and labeled-dataset construction.

Pairs of (document, faithful summary) are corrupted with probability ``p``.
Each corruption picks one of two hallucination types uniformly:

* ``baseless``: add a made-up sentence that is on topic but not grounded.
* ``contradictory``: rewrite one sentence so it contradicts the original.

Two injectors are provided. :class:`RuleInjector` is deterministic and offline;
:class:`LLMInjector` prompts a chat model.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Protocol, Sequence

import numpy as np

from .tokenizer import split_sentences, tokenize

log = logging.getLogger(__name__)

FAITHFUL, HALLUCINATED = "faithful", "hallucinated"
NONE, BASELESS, CONTRADICTORY = "none", "baseless", "contradictory"
HALLUCINATION_TYPES = (BASELESS, CONTRADICTORY)

BASELESS_PROMPT = (
    "Add a complete sentence that is related to the topic but introduces some new information "
    "you make up. You can add the sentence anywhere in the paragraph but make sure it is a "
    "complete sentence and the paragraph is coherent. Reply with the whole paragraph that "
    "includes the sentence you added."
)
CONTRADICTORY_PROMPT = (
    "Given the paragraph, rewrite one sentence completely so that it utterly contradicts from "
    "its original sentence. You can choose any sentence in the paragraph but make sure the "
    "paragraph is still coherent and now has a claim that contradicts the original paragraph. "
    "Reply with the whole paragraph after the change."
)
INJECTION_PROMPTS = {BASELESS: BASELESS_PROMPT, CONTRADICTORY: CONTRADICTORY_PROMPT}

# Invented names that the toy corpus never uses; baseless sentences draw from here.
RESERVED_ENTITIES = (
    "Quorvath", "Zelindra", "Threxley", "Vantorre", "Ombrisk", "Kalvane", "Drusmere",
    "Yssolde", "Brackwen", "Torvique", "Mirravel", "Xandrel", "Pellucia", "Grimsath",
    "Ulvarro", "Sefferine", "Corvaleth", "Nymbrosk", "Haldreth", "Ezravine", "Jorrunder",
    "Feyloch", "Wystmere", "Obrelian", "Tazmiric", "Lurquend", "Vexholme", "Ardquist",
)

BASELESS_TEMPLATES = (
    "Some accounts claim that {entity} once kept a private record about {topic}.",
    "Later that year, {entity} wrote a long letter describing {topic}.",
    "Rumors spread that {entity} had secretly studied {topic} for many years.",
    "It is also said that {entity} traded strange secrets concerning {topic}.",
    "Many people believed that {entity} had quietly arranged everything around {topic}.",
    "According to an old chronicle, {entity} first brought news of {topic} to the region.",
)

ANTONYMS = {
    "useless": "essential", "good": "bad", "true": "false", "always": "never",
    "increase": "decrease", "increased": "decreased", "win": "lose", "won": "lost",
    "strong": "weak", "safe": "dangerous", "success": "failure", "love": "hate",
    "loved": "hated", "rich": "poor", "early": "late", "alive": "dead", "friend": "enemy",
    "accepted": "rejected", "victory": "defeat", "cheap": "expensive", "lazy": "diligent",
    "better": "worse", "agree": "disagree", "agreed": "refused", "guilty": "innocent",
    "happy": "miserable", "victorious": "defeated", "peace": "war", "allowed": "forbidden",
}
ANTONYMS.update({v: k for k, v in list(ANTONYMS.items())})

AUXILIARIES = ("is", "are", "was", "were", "has", "have", "can", "should", "will")

STOPWORDS = frozenset(
    """a an the and or but if then so of to in on at by for with from as into about over
    after before under between through during without within is are was were be been being
    has have had do does did can could should would will shall may might must not no nor
    this that these those it its he she they them his her their him we us our you your i me
    my who whom which what when where why how all any both each few more most other some
    such only own same than too very just also there here once again out up down off""".split()
)


class NoCandidateError(ValueError):
    """No sentence contains a pattern the contradiction rule can flip."""


class InjectionRejected(ValueError):
    """The injector returned an empty or unchanged summary."""


class DataFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class DocumentPair:
    id: str
    context: str
    reference: str

    def __post_init__(self):
        if not self.context.strip() or not self.reference.strip():
            raise ValueError(f"pair {self.id!r}: context and reference must be non-empty")


@dataclass
class LabeledExample:
    id: str
    context: str
    response: str
    label: str
    hallucination_type: str = NONE
    injected_sentence_index: int | None = None
    injector: str = "rule"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in (FAITHFUL, HALLUCINATED):
            raise ValueError(f"unknown label {self.label!r}")
        if self.hallucination_type not in (NONE,) + HALLUCINATION_TYPES:
            raise ValueError(f"unknown hallucination type {self.hallucination_type!r}")
        if (self.label == FAITHFUL) != (self.hallucination_type == NONE):
            raise ValueError("label is faithful iff hallucination_type is none")
        if self.injector not in ("rule", "llm"):
            raise ValueError(f"unknown injector {self.injector!r}")

    @property
    def target(self) -> int:
        return int(self.label == HALLUCINATED)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict, strict: bool = True) -> "LabeledExample":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra and strict:
            raise ValueError(f"unknown fields {sorted(extra)}")
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Injection:
    text: str
    sentence_index: int | None
    kind: str
    fallback: bool = False


# -- rule-based injection ---------------------------------------------------------


def _join(sentences: Sequence[str]) -> str:
    return " ".join(sentences)


def topic_word(text: str) -> str:
    """Most frequent non-stopword (ties: lexicographic), in its original casing."""
    counts = Counter(t for t in tokenize(text) if t.isalpha() and t not in STOPWORDS and len(t) > 2)
    if not counts:
        return "these events"
    word = min(counts, key=lambda t: (-counts[t], t))
    m = re.search(rf"\b{re.escape(word)}\b", text, flags=re.IGNORECASE)
    return m.group(0) if m else word


def inject_baseless_rule(summary: str, seed: int) -> tuple[str, int]:
    """Insert one fabricated sentence at a seeded sentence boundary.

    Returns the new text and the index of the inserted sentence.
    """
    sentences = split_sentences(summary)
    if not sentences:
        raise ValueError("summary has no sentences")
    rng = np.random.default_rng(seed)
    present = set(tokenize(summary))
    candidates = [e for e in RESERVED_ENTITIES if e.lower() not in present]
    entity = candidates[int(rng.integers(len(candidates)))]
    template = BASELESS_TEMPLATES[int(rng.integers(len(BASELESS_TEMPLATES)))]
    new = template.format(entity=entity, topic=topic_word(summary))
    pos = int(rng.integers(len(sentences) + 1))
    return _join(sentences[:pos] + [new] + sentences[pos:]), pos


_WORD_RE = re.compile(r"[A-Za-z]+")


def _match_case(word: str, like: str) -> str:
    if like.isupper() and len(like) > 1:
        return word.upper()
    if like[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def flip_sentence(sentence: str) -> str | None:
    """Contradict one sentence, or return None if no rule applies.

    An antonym swap is preferred; otherwise ``not`` is inserted after (or
    removed from after) the first auxiliary verb.
    """
    words = list(_WORD_RE.finditer(sentence))
    for m in words:
        low = m.group(0).lower()
        if low in ANTONYMS:
            repl = _match_case(ANTONYMS[low], m.group(0))
            return sentence[: m.start()] + repl + sentence[m.end():]
    for i, m in enumerate(words):
        if m.group(0).lower() in AUXILIARIES:
            nxt = words[i + 1] if i + 1 < len(words) else None
            if nxt is not None and nxt.group(0).lower() == "not":
                return sentence[: m.end()] + sentence[nxt.end():]
            return sentence[: m.end()] + " not" + sentence[m.end():]
    return None


def inject_contradictory_rule(summary: str, seed: int) -> tuple[str, int]:
    """Flip a seeded-random flippable sentence; sentence count is unchanged."""
    sentences = split_sentences(summary)
    flips = [(i, flip_sentence(s)) for i, s in enumerate(sentences)]
    flips = [(i, f) for i, f in flips if f is not None]
    if not flips:
        raise NoCandidateError("no sentence has a negatable verb or a known antonym")
    rng = np.random.default_rng(seed)
    idx, flipped = flips[int(rng.integers(len(flips)))]
    sentences[idx] = flipped
    return _join(sentences), idx


class Injector(Protocol):
    name: str

    def inject(self, summary: str, kind: str, seed: int) -> Injection: ...


class RuleInjector:
    name = "rule"

    def inject(self, summary: str, kind: str, seed: int) -> Injection:
        if kind == BASELESS:
            text, idx = inject_baseless_rule(summary, seed)
            return Injection(text, idx, BASELESS)
        try:
            text, idx = inject_contradictory_rule(summary, seed)
            return Injection(text, idx, CONTRADICTORY)
        except NoCandidateError:
            text, idx = inject_baseless_rule(summary, seed)
            return Injection(text, idx, BASELESS, fallback=True)


def inject_llm(summary: str, kind: str, client) -> str:
    """Ask a chat model to inject a hallucination; ``client`` needs ``chat(system, user)``."""
    if kind not in INJECTION_PROMPTS:
        raise ValueError(f"unknown hallucination type {kind!r}")
    reply = client.chat(INJECTION_PROMPTS[kind], summary)
    if not reply or not reply.strip():
        raise InjectionRejected("empty reply")
    if reply.strip() == summary.strip():
        raise InjectionRejected("reply is identical to the input summary")
    return reply.strip()


class LLMInjector:
    name = "llm"

    def __init__(self, client):
        self.client = client

    def inject(self, summary: str, kind: str, seed: int) -> Injection:
        return Injection(inject_llm(summary, kind, self.client), None, kind)


# -- dataset construction -----------------------------------------------------------


def synthesize_dataset(
    pairs: Sequence[DocumentPair],
    p: float = 0.5,
    seed: int = 0,
    injector: Injector | None = None,
    max_workers: int = 1,
) -> list[LabeledExample]:
    """Corrupt each pair with probability ``p``; output order follows ``pairs``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    injector = injector or RuleInjector()
    rng = np.random.default_rng(seed)
    plan = []
    for pair in pairs:
        corrupt = rng.random() < p
        kind = HALLUCINATION_TYPES[int(rng.integers(2))]
        plan.append((pair, kind if corrupt else None, int(rng.integers(2**32))))

    def build(item) -> LabeledExample:
        pair, kind, inj_seed = item
        faithful = LabeledExample(pair.id, pair.context, pair.reference, FAITHFUL, injector=injector.name)
        if kind is None:
            return faithful
        try:
            inj = injector.inject(pair.reference, kind, inj_seed)
        except Exception as err:  # never abort mid-corpus
            log.warning("injection failed for %s (%s); keeping it faithful", pair.id, err)
            faithful.metadata = {"assigned_type": kind, "injection_error": str(err)}
            return faithful
        return LabeledExample(
            pair.id,
            pair.context,
            inj.text,
            HALLUCINATED,
            inj.kind,
            inj.sentence_index,
            injector.name,
            {"assigned_type": kind, "fallback": inj.fallback, "seed": inj_seed},
        )

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(build, plan))
    return [build(item) for item in plan]


def split_dataset(examples: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list, list, list]:
    """Seeded shuffle followed by a contiguous train/dev/test split."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three positive numbers summing to 1")
    n = len(examples)
    if n < 3:
        raise ValueError("need at least one example per split")
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(1, round(n * ratios[0])), n - 2)
    n_dev = min(max(1, round(n * ratios[1])), n - n_train - 1)
    items = [examples[i] for i in order]
    return items[:n_train], items[n_train : n_train + n_dev], items[n_train + n_dev :]


def dataset_stats(examples: Sequence[LabeledExample]) -> dict:
    n = len(examples)
    hall = [e for e in examples if e.label == HALLUCINATED]
    types = Counter(e.hallucination_type for e in hall)
    return {
        "count": n,
        "hallucinated": len(hall),
        "hallucinated_pct": 100.0 * len(hall) / n if n else 0.0,
        "baseless": types[BASELESS],
        "contradictory": types[CONTRADICTORY],
        "fallbacks": sum(bool(e.metadata.get("fallback")) for e in hall),
    }


# -- JSONL --------------------------------------------------------------------------


def write_jsonl(records: Iterable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            d = rec.to_dict() if hasattr(rec, "to_dict") else asdict(rec)
            fh.write(json.dumps(d, ensure_ascii=False) + "\n")


def _iter_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as err:
                raise DataFormatError(f"invalid JSON ({err.msg})", lineno) from err


def read_examples(path, strict: bool = True) -> list[LabeledExample]:
    out = []
    for lineno, obj in _iter_jsonl(path):
        try:
            out.append(LabeledExample.from_dict(obj, strict=strict))
        except (TypeError, ValueError) as err:
            raise DataFormatError(str(err), lineno) from err
    return out


def read_pairs(path) -> list[DocumentPair]:
    out = []
    for lineno, obj in _iter_jsonl(path):
        try:
            out.append(DocumentPair(str(obj["id"]), obj["context"], obj["reference"]))
        except (KeyError, TypeError, ValueError) as err:
            raise DataFormatError(f"bad document pair: {err}", lineno) from err
    return out


# -- toy corpus ---------------------------------------------------------------------

_NAMES = (
    "Aldric", "Berin", "Calla", "Dorian", "Elspeth", "Fenwick", "Garrow", "Halden", "Isolde",
    "Jorah", "Kestrel", "Lyra", "Merrin", "Nolwenn", "Osric", "Perrin", "Quilla", "Rowan",
    "Sabine", "Tamsin", "Ulric", "Vesna", "Wendel", "Yara", "Zora", "Anselm", "Brielle",
    "Cedric", "Delphine", "Evander",
)
_PLACES = (
    "Harrowgate", "Millbrook", "Stonefield", "Ashford", "Greywater", "Oakhollow", "Redcliff",
    "Thornbury", "Westmarch", "Eldergrove", "Saltmere", "Brightwater", "Copperhill", "Dunmore",
)
_OBJECTS = (
    "lantern", "ledger", "map", "sword", "chalice", "letter", "key", "compass", "banner",
    "locket", "journal", "crown", "shield", "flute", "seal", "cloak",
)
_TRAITS = (
    "loyal", "brave", "cautious", "wealthy", "patient", "curious", "stubborn", "honest",
    "generous", "quiet", "ambitious", "clever", "gentle", "proud", "restless", "wise",
)
_ROLES = ("captain", "steward", "healer", "merchant", "scholar", "guard", "envoy", "smith")
_EVENTS = ("harvest", "festival", "siege", "council", "wedding", "journey", "trial", "storm")
_FILLERS = (
    "The wind moved slowly across the {place} hills.",
    "Nobody in {place} spoke about it for several days.",
    "Rain fell over the roofs of {place} through the night.",
    "The market in {place} was crowded with travelers and carts.",
    "Bells rang from the old tower near the river.",
    "Smoke rose from the chimneys as evening came.",
    "A cold fog covered the fields around {place}.",
    "The road to {place} was muddy after the rain.",
)


def _fact(rng: np.random.Generator, cast: Sequence[str]) -> str:
    a, b = rng.choice(cast, size=2, replace=False)
    place = rng.choice(_PLACES)
    obj = rng.choice(_OBJECTS)
    kind = int(rng.integers(7))
    if kind == 0:
        return f"{a} is {rng.choice(_TRAITS)} and {rng.choice(_TRAITS)}."
    if kind == 1:
        return f"{a} was {rng.choice(_TRAITS)} during the {rng.choice(_EVENTS)} at {place}."
    if kind == 2:
        return f"{a} traveled to {place} with the {obj}."
    if kind == 3:
        return f"{a} gave the {obj} to {b} after the {rng.choice(_EVENTS)}."
    if kind == 4:
        return f"{a} met {b} in {place} before the {rng.choice(_EVENTS)}."
    if kind == 5:
        return f"The {obj} of {a} was hidden in {place}."
    return f"{a} is the {rng.choice(_ROLES)} of {place}."


def make_toy_corpus(
    n_pairs: int,
    seed: int = 0,
    context_tokens: int = 2000,
    summary_sentences: tuple[int, int] = (6, 10),
) -> list[DocumentPair]:
    """Seeded synthetic (document, summary) pairs.

    Documents mix fact sentences about a small cast with filler narration until
    they reach roughly ``context_tokens`` tokens. Summaries restate a sorted
    subset of the document's facts, always including at least one sentence
    with a copula so the contradiction rule has something to flip.
    """
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        cast = list(rng.choice(_NAMES, size=6, replace=False))
        sentences, facts, n_tok = [], [], 0
        while n_tok < context_tokens:
            if rng.random() < 0.6:
                s = _fact(rng, cast)
                facts.append(len(sentences))
            else:
                s = str(rng.choice(_FILLERS)).format(place=rng.choice(_PLACES))
            sentences.append(s)
            n_tok += len(tokenize(s))
        k = int(rng.integers(summary_sentences[0], summary_sentences[1] + 1))
        chosen = sorted(rng.choice(facts, size=min(k, len(facts)), replace=False).tolist())
        summary = [sentences[j] for j in chosen]
        if not any(flip_sentence(s) for s in summary):
            summary.append(f"{cast[0]} is {rng.choice(_TRAITS)}.")
            sentences.append(summary[-1])
        pairs.append(DocumentPair(f"toy-{i:05d}", _join(sentences), _join(summary)))
    return pairs
