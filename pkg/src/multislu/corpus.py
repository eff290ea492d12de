"""Corpora: ATIS-format ingestion, multiround feedback synthesis, metrics.

The ATIS file format is UTF-8 text, one ``token<TAB>tag`` pair per line, with
a blank line between utterances.  Multiround corpora are line-delimited JSON
records (``"format": 1``), each carrying the origin utterance, its feedback
rounds (text, tags, ADD/UPDATE kind) and the cumulative gold slot table after
every round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class CorpusError(Exception):
    pass


class AtisParseError(CorpusError):
    pass


class IobValidationError(CorpusError):
    pass


class VocabularyError(CorpusError):
    pass


class GenerationError(CorpusError):
    pass


# ---------------------------------------------------------------------------
# Label sets and tagged utterances


class LabelSet:
    """Ordered, unique slot label types with index lookup both ways."""

    def __init__(self, labels: Sequence[str]):
        labels = list(labels)
        if not labels:
            raise CorpusError("label set must contain at least one label")
        if len(set(labels)) != len(labels):
            raise CorpusError("duplicate labels in label set")
        self.labels = labels
        self._index = {l: i for i, l in enumerate(labels)}

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise VocabularyError(f"unknown label {label!r}") from None

    def label(self, i: int) -> str:
        return self.labels[i]

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelSet) and self.labels == other.labels

    def iob_tags(self) -> list[str]:
        """Full IOB tag alphabet: O first, then B-/I- per slot label.

        A literal "O" member contributes no B-/I- forms.
        """
        tags = ["O"]
        for l in self.labels:
            if l == "O":
                continue
            tags.append(f"B-{l}")
            tags.append(f"I-{l}")
        return tags


@dataclass(frozen=True)
class TaggedUtterance:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) != len(self.tags):
            raise CorpusError(
                f"{len(self.tokens)} tokens vs {len(self.tags)} tags"
            )

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


class FeedbackKind(str, Enum):
    ADD = "ADD"
    UPDATE = "UPDATE"


@dataclass(frozen=True)
class FeedbackRound:
    text: TaggedUtterance
    kind: FeedbackKind


@dataclass(frozen=True)
class MultiRoundSample:
    """Origin query plus 1..4 feedback rounds with cumulative gold tables.

    gold_tables[0] is the origin-only table; gold_tables[t] is the table after
    applying round t's feedback, so len(gold_tables) == len(rounds) + 1.
    """

    origin: TaggedUtterance
    rounds: tuple[FeedbackRound, ...]
    gold_tables: tuple[dict, ...]

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))
        object.__setattr__(self, "gold_tables", tuple(dict(t) for t in self.gold_tables))
        if not 1 <= len(self.rounds) <= 4:
            raise CorpusError(f"rounds must number 1..4, got {len(self.rounds)}")
        if len(self.gold_tables) != len(self.rounds) + 1:
            raise CorpusError("gold_tables length must be rounds + 1")


# ---------------------------------------------------------------------------
# IOB handling


def validate_iob(tags: Sequence[str], label_set: LabelSet | None = None) -> list[int]:
    """Indices where an I-X tag lacks a B-X/I-X predecessor; empty means ok.

    Tags must come from the IOB alphabet (of `label_set` when given); anything
    else raises VocabularyError.
    """
    alphabet = set(label_set.iob_tags()) if label_set is not None else None
    violations = []
    prev_label = None
    for i, tag in enumerate(tags):
        if alphabet is not None and tag not in alphabet:
            raise VocabularyError(f"tag {tag!r} not in IOB alphabet")
        if tag == "O":
            prev_label = None
        elif tag.startswith("B-"):
            prev_label = tag[2:]
        elif tag.startswith("I-"):
            if prev_label != tag[2:]:
                violations.append(i)
            prev_label = tag[2:]
        else:
            raise VocabularyError(f"malformed IOB tag {tag!r}")
    return violations


def iob_spans(tokens: Sequence[str], tags: Sequence[str]) -> list[tuple[str, int, int]]:
    """(label, start, end) half-open spans for a valid IOB sequence."""
    bad = validate_iob(tags)
    if bad:
        raise IobValidationError(f"IOB violations at indices {bad}")
    spans = []
    start = None
    label = None
    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            if start is not None:
                spans.append((label, start, i))
            start, label = i, tag[2:]
        elif tag == "O":
            if start is not None:
                spans.append((label, start, i))
                start = None
        # I- continues the open span
    if start is not None:
        spans.append((label, start, len(tags)))
    return spans


def extract_slots(utt: TaggedUtterance) -> dict:
    """Slot table {label: value} read directly off an utterance's gold tags.

    When a label spans multiple mentions, the later mention wins, matching the
    table's last-writer-wins update rule.
    """
    out = {}
    for label, s, e in iob_spans(utt.tokens, utt.tags):
        out[label] = " ".join(utt.tokens[s:e])
    return out


# ---------------------------------------------------------------------------
# ATIS format


def parse_atis(path) -> tuple[list[TaggedUtterance], LabelSet]:
    """Parse an ATIS-format file; validates IOB per utterance.

    Returns the utterances and the label set: the deduplicated tag alphabet
    stripped of B-/I- prefixes, plus O, in order of first appearance.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").split("\n")
    utterances: list[TaggedUtterance] = []
    tokens: list[str] = []
    tags: list[str] = []
    labels: list[str] = []
    seen = set()

    def flush(lineno):
        if not tokens:
            return
        bad = validate_iob(tags)
        if bad:
            raise IobValidationError(
                f"utterance {len(utterances)} (ending line {lineno}): "
                f"IOB violations at token indices {bad}"
            )
        utterances.append(TaggedUtterance(tuple(tokens), tuple(tags)))
        tokens.clear()
        tags.clear()

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            flush(lineno)
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise AtisParseError(f"line {lineno}: expected 'token<TAB>tag', got {line!r}")
        token, tag = parts
        tokens.append(token)
        tags.append(tag)
        stripped = tag[2:] if tag.startswith(("B-", "I-")) else tag
        if stripped not in seen:
            seen.add(stripped)
            labels.append(stripped)
    flush(len(lines))
    if "O" not in seen:
        labels.insert(0, "O")
    if not utterances:
        raise AtisParseError(f"{path}: no utterances found")
    return utterances, LabelSet(labels)


def serialize_atis(utterances: Iterable[TaggedUtterance]) -> str:
    blocks = []
    for utt in utterances:
        blocks.append("\n".join(f"{tok}\t{tag}" for tok, tag in zip(utt.tokens, utt.tags)))
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# Multiround synthesis

# Feedback phrasing per slot label; unknown labels fall back to a generic
# "set <label words> to" phrase so arbitrary tag sets (e.g. ATIS) still work.
_PHRASES = {
    "fromloc": ("leave", "from"),
    "toloc": ("go", "to"),
    "depart_date": ("depart", "on"),
    "return_date": ("return", "on"),
    "airline": ("fly", "with"),
    "flight_type": ("make", "it"),
    "meal": ("have",),
    "seat_class": ("sit", "in"),
}

# Function words that may be dropped together with the slot span they
# introduce, to keep withheld origins readable.
_CONNECTIVES = {"on", "to", "from", "with", "in", "returning", "serving"}


def _phrase(label: str) -> tuple[str, ...]:
    if label in _PHRASES:
        return _PHRASES[label]
    words = label.replace(".", " ").replace("_", " ").split()
    return ("set", *words, "to")


def _feedback_utterance(label: str, value: str, kind: FeedbackKind) -> TaggedUtterance:
    value_tokens = value.split()
    phrase = _phrase(label)
    if kind is FeedbackKind.ADD:
        prefix = ("i", "also", "want", "to", *phrase)
        suffix = ()
    else:
        prefix = ("i", "want", "to", *phrase)
        suffix = ("actually",)
    tokens = (*prefix, *value_tokens, *suffix)
    tags = (
        ("O",) * len(prefix)
        + (f"B-{label}",)
        + (f"I-{label}",) * (len(value_tokens) - 1)
        + ("O",) * len(suffix)
    )
    return TaggedUtterance(tokens, tags)


def _withhold(utt: TaggedUtterance, start: int, end: int) -> TaggedUtterance:
    # Drop the span; also drop one leading O-tagged connective if present.
    lo = start
    if lo > 0 and utt.tags[lo - 1] == "O" and utt.tokens[lo - 1] in _CONNECTIVES:
        lo -= 1
    tokens = utt.tokens[:lo] + utt.tokens[end:]
    tags = utt.tags[:lo] + utt.tags[end:]
    return TaggedUtterance(tokens, tags)


def synthesize_multiround(
    single_turn: TaggedUtterance,
    seed: int,
    rounds: int,
    value_pool: Mapping[str, Sequence[str]] | None = None,
    kinds: Sequence[FeedbackKind] | None = None,
) -> MultiRoundSample:
    """Expand a single tagged utterance into a multiround feedback sample.

    ADD rounds withhold one slot span from the origin and reintroduce it via
    a feedback template; UPDATE rounds replace an existing slot's value with
    a different one drawn from `value_pool`.  Deterministic under `seed`.

    `kinds`, when given, fixes the feedback kind per round; otherwise kinds
    are chosen randomly subject to feasibility (ADD needs a withholdable
    span, UPDATE needs an alternate pool value).
    """
    if not 1 <= rounds <= 4:
        raise GenerationError(f"rounds must be 1..4, got {rounds}")
    spans = iob_spans(single_turn.tokens, single_turn.tags)
    if not spans:
        raise GenerationError("utterance has no slots to work with")
    if kinds is not None and len(kinds) != rounds:
        raise GenerationError("kinds length must equal rounds")

    rng = np.random.default_rng(seed)
    pool = {k: list(v) for k, v in (value_pool or {}).items()}
    # Values seen in the utterance itself are always available as alternates.
    for label, s, e in spans:
        val = " ".join(single_turn.tokens[s:e])
        pool.setdefault(label, [])
        if val not in pool[label]:
            pool[label].append(val)

    # ADD count is bounded so the origin keeps at least one slot.
    max_adds = len(spans) - 1
    updates_possible = any(len(set(pool[l])) >= 2 for l, _, _ in spans)
    if kinds is not None:
        fixed = [FeedbackKind(k) for k in kinds]
        n_adds = sum(1 for k in fixed if k is FeedbackKind.ADD)
        if n_adds > max_adds:
            raise GenerationError(
                f"{n_adds} ADD rounds requested but only {max_adds} spans can be withheld"
            )
    else:
        fixed = None
        lo = 0 if updates_possible else rounds
        hi = min(rounds, max_adds)
        if lo > hi:
            raise GenerationError(
                "cannot fill the requested rounds: too few slots to withhold "
                "and no alternate values for UPDATE"
            )
        n_adds = int(rng.integers(lo, hi + 1))

    # Pick which spans the ADD rounds withhold (later spans removed first so
    # earlier offsets stay valid).
    span_order = list(rng.permutation(len(spans)))
    withheld_idx = sorted(span_order[:n_adds], reverse=True)
    origin = single_turn
    withheld: list[tuple[str, str]] = []
    for si in withheld_idx:
        label, s, e = spans[si]
        withheld.append((label, " ".join(single_turn.tokens[s:e])))
        origin = _withhold(origin, s, e)
    withheld.reverse()

    gold_tables = [extract_slots(origin)]
    feedback_rounds: list[FeedbackRound] = []
    add_queue = list(withheld)
    for r in range(rounds):
        table = dict(gold_tables[-1])
        # An ADD entry is only valid if it actually introduces new information.
        addable = [(l, v) for l, v in add_queue if table.get(l) != v]
        updatable = [
            (l, v) for l in sorted(table) for v in pool.get(l, []) if v != table[l]
        ]
        if fixed is not None:
            kind = fixed[r]
        else:
            remaining = rounds - r
            if len(add_queue) >= remaining and addable:
                kind = FeedbackKind.ADD  # must drain the withheld spans in time
            elif addable and updatable:
                kind = FeedbackKind.ADD if rng.integers(0, 2) else FeedbackKind.UPDATE
            elif addable:
                kind = FeedbackKind.ADD
            else:
                kind = FeedbackKind.UPDATE
        if kind is FeedbackKind.ADD:
            if not addable:
                raise GenerationError(f"round {r + 1}: no withheld span left to ADD")
            label, value = addable[int(rng.integers(0, len(addable)))]
            add_queue.remove((label, value))
            if label in table:
                kind = FeedbackKind.UPDATE  # same label seen twice in the source
        else:
            if not updatable:
                raise GenerationError(f"round {r + 1}: no alternate value exists for UPDATE")
            label, value = updatable[int(rng.integers(0, len(updatable)))]
        table[label] = value
        feedback_rounds.append(FeedbackRound(_feedback_utterance(label, value, kind), kind))
        gold_tables.append(table)
    return MultiRoundSample(origin, tuple(feedback_rounds), tuple(gold_tables))


def value_pool_from(utterances: Iterable[TaggedUtterance]) -> dict[str, list[str]]:
    """Collect every surface value per label across a corpus."""
    pool: dict[str, list[str]] = {}
    for utt in utterances:
        for label, s, e in iob_spans(utt.tokens, utt.tags):
            val = " ".join(utt.tokens[s:e])
            pool.setdefault(label, [])
            if val not in pool[label]:
                pool[label].append(val)
    return pool


# ---------------------------------------------------------------------------
# Synthetic flight-booking world

SYNTH_LABELS = [
    "fromloc",
    "toloc",
    "depart_date",
    "return_date",
    "airline",
    "flight_type",
    "meal",
    "seat_class",
]

SYNTH_VALUES: dict[str, list[str]] = {
    "fromloc": ["boston", "denver", "atlanta", "dallas", "chicago", "seattle", "miami"],
    "toloc": ["boston", "denver", "atlanta", "dallas", "chicago", "seattle", "miami"],
    "depart_date": ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"],
    "return_date": ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"],
    "airline": ["delta", "united", "american"],
    "flight_type": ["round trip", "one way"],
    "meal": ["breakfast", "dinner"],
    "seat_class": ["coach", "business"],
}

# Clause templates appended to the origin query for optional slots.
_SYNTH_CLAUSES = {
    "depart_date": ("on",),
    "return_date": ("returning",),
    "airline": ("with",),
    "flight_type": (),
    "meal": ("serving",),
    "seat_class": ("in",),
}


def _synth_origin(slots: dict[str, str], rng: np.random.Generator) -> TaggedUtterance:
    head = [("show", "O"), ("me", "O"), ("flights", "O")] if rng.integers(0, 2) else [
        ("i", "O"),
        ("want", "O"),
        ("to", "O"),
        ("fly", "O"),
    ]
    pairs = list(head)

    def put(label, lead):
        value_tokens = slots[label].split()
        for w in lead:
            pairs.append((w, "O"))
        pairs.append((value_tokens[0], f"B-{label}"))
        for w in value_tokens[1:]:
            pairs.append((w, f"I-{label}"))

    put("fromloc", ("from",))
    put("toloc", ("to",))
    for label in SYNTH_LABELS[2:]:
        if label in slots:
            put(label, _SYNTH_CLAUSES[label])
    tokens, tags = zip(*pairs)
    return TaggedUtterance(tokens, tags)


def make_synthetic_corpus(
    n_samples: int, seed: int, max_rounds: int = 4, min_rounds: int = 1
) -> tuple[list[MultiRoundSample], LabelSet]:
    """Deterministic multiround flight-booking corpus over an 8-label world."""
    if not 1 <= min_rounds <= max_rounds <= 4:
        raise GenerationError(f"bad round range {min_rounds}..{max_rounds}")
    rng = np.random.default_rng(seed)
    label_set = LabelSet(SYNTH_LABELS)
    samples = []
    optional = SYNTH_LABELS[2:]
    while len(samples) < n_samples:
        slots = {
            "fromloc": SYNTH_VALUES["fromloc"][int(rng.integers(0, len(SYNTH_VALUES["fromloc"])))],
        }
        toloc_opts = [c for c in SYNTH_VALUES["toloc"] if c != slots["fromloc"]]
        slots["toloc"] = toloc_opts[int(rng.integers(0, len(toloc_opts)))]
        n_extra = int(rng.integers(1, len(optional) + 1))
        extra = list(rng.permutation(optional))[:n_extra]
        for label in extra:
            vals = SYNTH_VALUES[label]
            slots[label] = vals[int(rng.integers(0, len(vals)))]
        full = _synth_origin(slots, rng)
        rounds = int(rng.integers(min_rounds, max_rounds + 1))
        try:
            sample = synthesize_multiround(
                full, seed=int(rng.integers(0, 2**31)), rounds=rounds, value_pool=SYNTH_VALUES
            )
        except GenerationError:
            continue
        samples.append(sample)
    return samples, label_set


# ---------------------------------------------------------------------------
# Metrics


def slot_f1(
    predicted: Sequence[Mapping[str, str]], gold: Sequence[Mapping[str, str]]
) -> tuple[float, float, float]:
    """Micro precision/recall/F1 over exact (label, value) matches."""
    if len(predicted) != len(gold):
        raise CorpusError(f"{len(predicted)} predictions vs {len(gold)} gold tables")
    tp = 0
    n_pred = 0
    n_gold = 0
    for p, g in zip(predicted, gold):
        n_pred += len(p)
        n_gold += len(g)
        tp += sum(1 for label, value in p.items() if g.get(label) == value)
    precision = tp / n_pred if n_pred else (1.0 if n_gold == 0 else 0.0)
    recall = tp / n_gold if n_gold else (1.0 if n_pred == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def sentence_accuracy(
    predicted: Sequence[Mapping[str, str]], gold: Sequence[Mapping[str, str]]
) -> float:
    """Fraction of samples whose table matches gold exactly."""
    if len(predicted) != len(gold):
        raise CorpusError(f"{len(predicted)} predictions vs {len(gold)} gold tables")
    if not gold:
        return 0.0
    return sum(1 for p, g in zip(predicted, gold) if dict(p) == dict(g)) / len(gold)


# ---------------------------------------------------------------------------
# Multiround corpus serialization (format 1)


def _utt_to_json(utt: TaggedUtterance) -> dict:
    return {"tokens": list(utt.tokens), "tags": list(utt.tags)}


def _utt_from_json(obj: dict) -> TaggedUtterance:
    return TaggedUtterance(tuple(obj["tokens"]), tuple(obj["tags"]))


def save_multiround(samples: Iterable[MultiRoundSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            rec = {
                "format": 1,
                "origin": _utt_to_json(s.origin),
                "rounds": [
                    {**_utt_to_json(r.text), "kind": r.kind.value} for r in s.rounds
                ],
                "gold_tables": [dict(t) for t in s.gold_tables],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_multiround(path) -> list[MultiRoundSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("format") != 1:
                raise CorpusError(f"line {lineno}: unsupported format {rec.get('format')!r}")
            samples.append(
                MultiRoundSample(
                    origin=_utt_from_json(rec["origin"]),
                    rounds=tuple(
                        FeedbackRound(_utt_from_json(r), FeedbackKind(r["kind"]))
                        for r in rec["rounds"]
                    ),
                    gold_tables=tuple(rec["gold_tables"]),
                )
            )
    return samples


def corpus_label_set(samples: Sequence[MultiRoundSample]) -> LabelSet:
    """Label set observed across a multiround corpus, in first-seen order."""
    labels: list[str] = []
    seen = set()
    for s in samples:
        for utt in (s.origin, *(r.text for r in s.rounds)):
            for tag in utt.tags:
                if tag.startswith(("B-", "I-")) and tag[2:] not in seen:
                    seen.add(tag[2:])
                    labels.append(tag[2:])
    return LabelSet(labels)


def corpus_vocab(samples: Sequence[MultiRoundSample]) -> dict[str, int]:
    """Token -> index over a corpus, index 0 reserved for the UNK token."""
    vocab = {"<unk>": 0}
    for s in samples:
        for utt in (s.origin, *(r.text for r in s.rounds)):
            for tok in utt.tokens:
                if tok not in vocab:
                    vocab[tok] = len(vocab)
    return vocab
