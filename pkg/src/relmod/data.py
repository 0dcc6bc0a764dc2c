"""Examples, SQuAD 2.0 ingestion, the synthetic mismatch task, and batching.

Synthetic datasets are stored as JSON lines, one record per example::

    {"id": "syn-000001",
     "question_tokens": ["what", "caused", ...],
     "context_tokens": ["the", "northridge", "earthquake", ...],
     "answer_span": [1, 2] | null,
     "plausible_span": [1, 2] | null,
     "is_answerable": true}

Spans are inclusive token indices into ``context_tokens``.
"""

from __future__ import annotations

import json
import logging
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

Span = tuple[int, int]


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Lowercased word / punctuation tokens with their [start, end) char offsets."""
    return [(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def tokenize(text: str) -> list[str]:
    return [t for t, _, _ in tokenize_with_offsets(text)]


@dataclass
class Example:
    id: str
    question_tokens: list[str]
    context_tokens: list[str]
    answer_span: Span | None = None
    plausible_span: Span | None = None
    is_answerable: bool = False

    def __post_init__(self):
        if self.answer_span is not None:
            self.answer_span = tuple(self.answer_span)
        if self.plausible_span is not None:
            self.plausible_span = tuple(self.plausible_span)
        if self.is_answerable != (self.answer_span is not None):
            raise ValueError(f"{self.id}: is_answerable disagrees with answer_span")
        n = len(self.context_tokens)
        for span in (self.answer_span, self.plausible_span):
            if span is not None and not 0 <= span[0] <= span[1] < n:
                raise ValueError(f"{self.id}: span {span} outside context of length {n}")
        if self.is_answerable and self.plausible_span is None:
            self.plausible_span = self.answer_span

    @property
    def raw_context_tokens(self) -> list[str]:
        return self.context_tokens

    def answer_text(self) -> str:
        if self.answer_span is None:
            return ""
        s, e = self.answer_span
        return " ".join(self.context_tokens[s:e + 1])

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "question_tokens": self.question_tokens,
            "context_tokens": self.context_tokens,
            "answer_span": list(self.answer_span) if self.answer_span else None,
            "plausible_span": list(self.plausible_span) if self.plausible_span else None,
            "is_answerable": self.is_answerable,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Example":
        return cls(
            id=rec["id"],
            question_tokens=list(rec["question_tokens"]),
            context_tokens=list(rec["context_tokens"]),
            answer_span=rec.get("answer_span"),
            plausible_span=rec.get("plausible_span"),
            is_answerable=bool(rec["is_answerable"]),
        )


def write_jsonl(examples: Iterable[Example], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_record(), separators=(",", ":")) + "\n")


def read_jsonl(path: str | Path) -> list[Example]:
    with open(path, encoding="utf-8") as fh:
        return [Example.from_record(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------- SQuAD 2.0


class SquadFormatError(ValueError):
    pass


def _require(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SquadFormatError(f"missing field {path}.{key}")
    return obj[key]


def _char_to_token_span(offsets, start: int, text: str, context: str) -> Span | None:
    end = start + len(text)
    if start < 0 or end > len(context) or context[start:end].strip().lower() != text.strip().lower():
        return None
    covered = [i for i, (_, s, e) in enumerate(offsets) if e > start and s < end]
    if not covered:
        return None
    return covered[0], covered[-1]


def parse_squad_v2(document: str, stats: dict | None = None) -> list[Example]:
    """One Example per ``qas`` entry of a SQuAD 2.0 JSON document.

    Entries whose answer offsets cannot be aligned to tokens are skipped with
    a warning; pass ``stats`` to receive the ``skipped`` count.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as err:
        raise SquadFormatError(f"malformed JSON: {err}") from err
    data = _require(doc, "data", "$")
    if not isinstance(data, list):
        raise SquadFormatError("$.data is not a list")
    out: list[Example] = []
    skipped = 0
    for ai, article in enumerate(data):
        apath = f"$.data[{ai}]"
        for pi, para in enumerate(_require(article, "paragraphs", apath)):
            ppath = f"{apath}.paragraphs[{pi}]"
            context = _require(para, "context", ppath)
            offsets = tokenize_with_offsets(context)
            ctx_tokens = [t for t, _, _ in offsets]
            for qi, qa in enumerate(_require(para, "qas", ppath)):
                qpath = f"{ppath}.qas[{qi}]"
                qid = str(_require(qa, "id", qpath))
                question = _require(qa, "question", qpath)
                impossible = bool(qa.get("is_impossible", False))
                answers = _require(qa, "answers", qpath)
                answer_span = plausible_span = None
                ok = True
                if not impossible:
                    if not answers:
                        raise SquadFormatError(f"{qpath}.answers is empty for an answerable question")
                    ans = answers[0]
                    answer_span = _char_to_token_span(
                        offsets, _require(ans, "answer_start", f"{qpath}.answers[0]"),
                        _require(ans, "text", f"{qpath}.answers[0]"), context)
                    ok = answer_span is not None
                else:
                    plausible = qa.get("plausible_answers") or []
                    if plausible:
                        p = plausible[0]
                        plausible_span = _char_to_token_span(
                            offsets, _require(p, "answer_start", f"{qpath}.plausible_answers[0]"),
                            _require(p, "text", f"{qpath}.plausible_answers[0]"), context)
                        ok = plausible_span is not None
                if not ok:
                    skipped += 1
                    log.warning("skipping %s: answer offset does not align with context", qid)
                    continue
                out.append(Example(
                    id=qid,
                    question_tokens=tokenize(question),
                    context_tokens=ctx_tokens,
                    answer_span=answer_span,
                    plausible_span=plausible_span,
                    is_answerable=not impossible,
                ))
    if stats is not None:
        stats["skipped"] = skipped
    return out


def load_squad_v2(path: str | Path, stats: dict | None = None) -> list[Example]:
    return parse_squad_v2(Path(path).read_text(encoding="utf-8"), stats)


def load_examples(path: str | Path) -> list[Example]:
    """Dispatch on extension: ``.jsonl`` is the synthetic format, else SQuAD JSON."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return read_jsonl(path)
    return load_squad_v2(path)


# ---------------------------------------------------------------- synthetic task


@dataclass
class SyntheticConfig:
    num_examples: int = 2000
    answerable_ratio: float = 0.5
    entities: Sequence[str] = (
        "northridge", "loma", "tohoku", "galveston", "sendai", "katrina", "andrew",
        "sandy", "harvey", "maria", "irma", "kobe", "napa", "alaska", "haiti",
        "chile", "nepal", "sumatra", "oakland", "malibu", "camp", "paradise",
        "ventura", "sonoma", "orleans", "tulsa", "joplin", "moore", "dayton", "xenia",
    )
    events: Sequence[str] = ("earthquake", "flood", "storm", "fire", "hurricane", "tornado", "landslide")
    units: Sequence[str] = ("thousand", "million", "billion")
    quantities: Sequence[str] = tuple(str(q) for q in (2, 3, 5, 8, 12, 15, 20, 25, 30, 40, 45, 60, 75, 90))
    context_facts_per_example: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("entities", "events", "units", "quantities"):
            if not getattr(self, name):
                raise ValueError(f"SyntheticConfig.{name} must be non-empty")
        if not 0.0 <= self.answerable_ratio <= 1.0:
            raise ValueError("answerable_ratio must lie in [0, 1]")
        if self.context_facts_per_example < 1:
            raise ValueError("context_facts_per_example must be >= 1")
        if len(self.entities) < self.context_facts_per_example:
            raise ValueError("need at least as many entities as facts per example")


@dataclass(frozen=True)
class Fact:
    entity: str
    event: str
    quantity: str
    unit: str


_FACT_TEMPLATES = (
    "the {e} {v} caused {q} {u} in damage .",
    "{q} {u} in damage was caused by the {e} {v} .",
)
QUESTION_TEMPLATE = "what caused {q} {u} in damage ?"


def _render_facts(facts: Sequence[Fact], templates: Sequence[int]) -> tuple[list[str], list[Span]]:
    tokens: list[str] = []
    spans: list[Span] = []
    for fact, t in zip(facts, templates):
        words = _FACT_TEMPLATES[t].format(e=fact.entity, v=fact.event, q=fact.quantity, u=fact.unit).split()
        e_at = words.index(fact.entity)
        spans.append((len(tokens) + e_at, len(tokens) + e_at + 1))
        tokens.extend(words)
    return tokens, spans


def parse_facts(context_tokens: Sequence[str]) -> list[tuple[Fact, Span]]:
    """Recover (fact, entity span) pairs from a rendered synthetic context."""
    facts = []
    start = 0
    toks = list(context_tokens)
    while start < len(toks):
        end = toks.index(".", start)
        w = toks[start:end]
        if w[0] == "the":  # the E V caused Q U in damage
            fact, e_at = Fact(w[1], w[2], w[4], w[5]), 1
        else:  # Q U in damage was caused by the E V
            fact, e_at = Fact(w[8], w[9], w[0], w[1]), 8
        facts.append((fact, (start + e_at, start + e_at + 1)))
        start = end + 1
    return facts


def _pick_other(rng: random.Random, pool: Sequence[str], avoid: str) -> str:
    return rng.choice([x for x in pool if x != avoid])


def generate_synthetic(config: SyntheticConfig) -> list[Example]:
    """Mismatch-detection QA: does any fact bind the asked quantity to the asked unit?

    Each context carries decoy facts that reuse the asked quantity with another
    unit and the asked unit with another quantity, so answerability hinges on
    which quantity and unit occur *in the same fact*. Unanswerable examples
    mutate the unit or the quantity of the target fact; that entity becomes
    the plausible span.
    """
    rng = random.Random(config.rng_seed)
    n = config.num_examples
    n_ans = int(round(config.answerable_ratio * n))
    flags = [True] * n_ans + [False] * (n - n_ans)
    rng.shuffle(flags)
    k = config.context_facts_per_example
    multi_unit = len(config.units) > 1
    multi_qty = len(config.quantities) > 1
    examples = []
    for idx, answerable in enumerate(flags):
        entities = rng.sample(list(config.entities), k)
        q_star = rng.choice(config.quantities)
        u_star = rng.choice(config.units)
        facts: list[Fact] = []
        target = rng.randrange(k)
        decoys = []
        if multi_unit:
            decoys.append((q_star, _pick_other(rng, config.units, u_star)))
        if multi_qty:
            decoys.append((_pick_other(rng, config.quantities, q_star), u_star))
        others = [i for i in range(k) if i != target]
        rng.shuffle(others)
        assigned: dict[int, tuple[str, str]] = dict(zip(others, decoys))
        for i in range(k):
            if i == target:
                q, u = q_star, u_star
            elif i in assigned:
                q, u = assigned[i]
            else:
                while True:
                    q, u = rng.choice(config.quantities), rng.choice(config.units)
                    if (q, u) != (q_star, u_star):
                        break
            facts.append(Fact(entities[i], rng.choice(config.events), q, u))
        if not answerable:
            t = facts[target]
            mutate_unit = multi_unit and (not multi_qty or rng.random() < 0.5)
            if mutate_unit:
                facts[target] = Fact(t.entity, t.event, t.quantity, _pick_other(rng, config.units, t.unit))
            else:
                facts[target] = Fact(t.entity, t.event, _pick_other(rng, config.quantities, t.quantity), t.unit)
        templates = [rng.randrange(len(_FACT_TEMPLATES)) for _ in range(k)]
        tokens, spans = _render_facts(facts, templates)
        examples.append(Example(
            id=f"syn-{config.rng_seed}-{idx:06d}",
            question_tokens=QUESTION_TEMPLATE.format(q=q_star, u=u_star).split(),
            context_tokens=tokens,
            answer_span=spans[target] if answerable else None,
            plausible_span=spans[target],
            is_answerable=answerable,
        ))
    return examples


# ---------------------------------------------------------------- vocabulary and batches


@dataclass
class Vocab:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError("vocab must start with the pad and unk tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, examples: Iterable[Example], min_count: int = 1) -> "Vocab":
        counts: Counter[str] = Counter()
        for ex in examples:
            counts.update(ex.question_tokens)
            counts.update(ex.context_tokens)
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls([PAD, UNK] + kept)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]


@dataclass
class EncodedBatch:
    ids: list[str]
    question_ids: np.ndarray      # B x Lq, int64, pad = 0
    question_mask: np.ndarray     # B x Lq, bool
    context_ids: np.ndarray       # B x Lc
    context_mask: np.ndarray      # B x Lc
    answer_start: np.ndarray      # B, -1 when unanswerable
    answer_end: np.ndarray
    plausible_start: np.ndarray   # B, -1 when no auxiliary span
    plausible_end: np.ndarray
    is_answerable: np.ndarray     # B, bool
    examples: list[Example] = field(repr=False, default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def context_lengths(self) -> np.ndarray:
        return self.context_mask.sum(axis=1)


def _pad(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(1, max(len(r) for r in rows))
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
        mask[i, :len(r)] = True
    return ids, mask


def encode_batch(examples: Sequence[Example], vocab: Vocab) -> EncodedBatch:
    q_ids, q_mask = _pad([vocab.encode(ex.question_tokens) for ex in examples])
    c_ids, c_mask = _pad([vocab.encode(ex.context_tokens) for ex in examples])

    def col(get):
        return np.array([get(ex) for ex in examples], dtype=np.int64)

    return EncodedBatch(
        ids=[ex.id for ex in examples],
        question_ids=q_ids,
        question_mask=q_mask,
        context_ids=c_ids,
        context_mask=c_mask,
        answer_start=col(lambda ex: ex.answer_span[0] if ex.answer_span else -1),
        answer_end=col(lambda ex: ex.answer_span[1] if ex.answer_span else -1),
        plausible_start=col(lambda ex: ex.plausible_span[0] if ex.plausible_span else -1),
        plausible_end=col(lambda ex: ex.plausible_span[1] if ex.plausible_span else -1),
        is_answerable=np.array([ex.is_answerable for ex in examples], dtype=bool),
        examples=list(examples),
    )


def batchify(examples: Sequence[Example], batch_size: int, vocab: Vocab) -> list[EncodedBatch]:
    """Consecutive chunks of ``batch_size``, each padded to its own max lengths."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [encode_batch(examples[i:i + batch_size], vocab) for i in range(0, len(examples), batch_size)]


def unpad(batch: EncodedBatch) -> list[dict]:
    """Invert padding: per-example id lists and span labels."""
    out = []
    for b in range(len(batch)):
        def span(s, e):
            return None if s[b] < 0 else (int(s[b]), int(e[b]))
        out.append({
            "id": batch.ids[b],
            "question_ids": batch.question_ids[b][batch.question_mask[b]].tolist(),
            "context_ids": batch.context_ids[b][batch.context_mask[b]].tolist(),
            "answer_span": span(batch.answer_start, batch.answer_end),
            "plausible_span": span(batch.plausible_start, batch.plausible_end),
        })
    return out
