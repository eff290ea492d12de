"""Slot filling table: union/overwrite updates, query rendering, flight lookup.

A table maps each slot label to at most one entry (surface value, the round
that wrote it, and the masked embedding row it came from).  Tables are
immutable values; every update returns a fresh table.  Rendering turns the
surface strings into a flight query via a versioned template file, and the
mock backend answers queries from a fixture flight database shipped in-repo.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .corpus import LabelSet
from .policy import MaskedSlotMatrix
from .tagger import SlotCandidateMatrix


class TableIntegrityError(Exception):
    """A non-zero masked row has no provenance, or label spaces disagree."""


class TemplateError(Exception):
    pass


class FlightBackendError(Exception):
    """The fixture flight database could not be reached or parsed."""


@dataclass(frozen=True)
class TableEntry:
    value: str
    source_round: int
    embedding: np.ndarray = field(compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TableEntry):
            return NotImplemented
        return (
            self.value == other.value
            and self.source_round == other.source_round
            and np.array_equal(self.embedding, other.embedding)
        )

    def __hash__(self):
        return hash((self.value, self.source_round))


class SlotFillingTable:
    """Immutable per-label value store; iteration follows label-set order."""

    __slots__ = ("label_set", "_entries")

    def __init__(self, label_set: LabelSet, entries: dict[str, TableEntry] | None = None):
        self.label_set = label_set
        held = dict(entries) if entries else {}
        for label in held:
            if label not in label_set:
                raise TableIntegrityError(f"entry label {label!r} outside the label set")
        self._entries = held

    @classmethod
    def empty(cls, label_set: LabelSet) -> "SlotFillingTable":
        return cls(label_set)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, label: str) -> bool:
        return label in self._entries

    def get(self, label: str) -> TableEntry | None:
        return self._entries.get(label)

    def __getitem__(self, label: str) -> TableEntry:
        return self._entries[label]

    def items(self) -> Iterator[tuple[str, TableEntry]]:
        for label in self.label_set.labels:
            if label in self._entries:
                yield label, self._entries[label]

    def values_by_label(self) -> dict[str, str]:
        """{label: surface value}, the shape the metrics consume."""
        return {label: e.value for label, e in self.items()}

    def as_payload(self) -> list[dict]:
        """JSON-ready rows in label order: label, value, source_round."""
        return [
            {"label": label, "value": e.value, "source_round": e.source_round}
            for label, e in self.items()
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SlotFillingTable):
            return NotImplemented
        return (
            self.label_set.labels == other.label_set.labels
            and self._entries == other._entries
        )

    def __repr__(self) -> str:
        inner = ", ".join(f"{l}={e.value!r}@r{e.source_round}" for l, e in self.items())
        return f"SlotFillingTable({inner})"


def update_table(
    prev: SlotFillingTable,
    masked: MaskedSlotMatrix,
    candidates: SlotCandidateMatrix,
    round_index: int,
) -> SlotFillingTable:
    """Fold one round's masked slot matrix into the table.

    Every label whose masked row is non-zero is written: inserted if absent,
    overwritten if present (last writer wins).  Zero rows leave the previous
    entry untouched; nothing is ever deleted.  `prev` is not modified.
    """
    label_set = prev.label_set
    if candidates.label_set.labels != label_set.labels:
        raise TableIntegrityError(
            "candidate label set does not match the table's label set"
        )
    k = label_set.k
    if masked.matrix.shape[0] != k:
        raise TableIntegrityError(
            f"masked matrix has {masked.matrix.shape[0]} rows for {k} labels"
        )
    if not np.array_equal(masked.source, candidates.matrix):
        raise TableIntegrityError(
            "masked matrix was not derived from the given candidate matrix"
        )
    entries = dict(prev._entries)
    for i in range(k):
        mrow = masked.matrix[i]
        if not np.any(mrow):
            continue
        label = label_set.label(i)
        spans = candidates.provenance.get(label)
        if not spans:
            raise TableIntegrityError(
                f"non-zero masked row for {label!r} has no provenance span"
            )
        entries[label] = TableEntry(spans[-1].text, round_index, mrow.copy())
    return SlotFillingTable(label_set, entries)


# ---------------------------------------------------------------------------
# Query rendering


@dataclass(frozen=True)
class FlightQuery:
    text: str
    fields: dict[str, str]
    complete: bool  # origin or destination known


@dataclass
class QueryTemplates:
    """Versioned rendering rules: base skeletons plus per-slot clauses.

    File format, one rule per line (# comments allowed)::

        version=1
        base fromloc toloc=flights from {fromloc} to {toloc}
        clause depart_date=departing {depart_date}
        fallback=with {label} {value}
    """

    version: int
    bases: list[tuple[frozenset[str], str]]
    clauses: dict[str, str]
    fallback: str

    @classmethod
    def parse(cls, text: str) -> "QueryTemplates":
        version = None
        bases: list[tuple[frozenset[str], str]] = []
        clauses: dict[str, str] = {}
        fallback = "with {label} {value}"
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise TemplateError(f"line {ln}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "version":
                version = int(value)
            elif key.startswith("base"):
                slots = frozenset(key.split()[1:])
                bases.append((slots, value))
            elif key.startswith("clause "):
                clauses[key.split()[1]] = value
            elif key == "fallback":
                fallback = value
            else:
                raise TemplateError(f"line {ln}: unknown rule {key!r}")
        if version is None:
            raise TemplateError("template file missing a version line")
        return cls(version, bases, clauses, fallback)


def load_templates(path: str | Path | None = None) -> QueryTemplates:
    if path is not None:
        return QueryTemplates.parse(Path(path).read_text())
    text = resources.files("multislu").joinpath("data/templates.txt").read_text()
    return QueryTemplates.parse(text)


def render_query(
    table: SlotFillingTable, templates: QueryTemplates | None = None
) -> FlightQuery:
    """Deterministic template fill over the table's surface strings.

    The base skeleton is the first rule whose slot set is exactly the filled
    subset of {fromloc, toloc}; remaining filled slots append clauses in
    label order.  A table with neither origin nor destination renders a
    query flagged incomplete.
    """
    if templates is None:
        templates = load_templates()
    fields = table.values_by_label()
    anchor = frozenset(s for s in ("fromloc", "toloc") if s in fields)
    base = None
    for slots, skeleton in templates.bases:
        if slots == anchor:
            base = skeleton
            break
    if base is None:
        raise TemplateError(f"no base template for anchor slots {sorted(anchor)}")
    parts = [base.format(**{s: fields[s] for s in anchor})] if anchor else [base]
    for label, value in fields.items():
        if label in anchor:
            continue
        clause = templates.clauses.get(label)
        if clause is None:
            parts.append(templates.fallback.format(label=label.replace("_", " "), value=value))
        else:
            parts.append(clause.format(**{label: value}))
    text = " ".join(p for p in parts if p)
    return FlightQuery(text=text, fields=dict(fields), complete=bool(anchor))


# ---------------------------------------------------------------------------
# Mock flight search


@dataclass(frozen=True)
class FlightRecord:
    airline: str
    from_city: str
    to_city: str
    depart: str
    ret: str  # "-" for one-way flights
    flight_type: str
    fare: str

    def as_payload(self) -> dict:
        return {
            "airline": self.airline,
            "from": self.from_city,
            "to": self.to_city,
            "depart": self.depart,
            "return": self.ret,
            "type": self.flight_type,
            "fare": self.fare,
        }


@dataclass
class FlightResult:
    kind: str  # "ok" | "insufficient_slots"
    flights: list[FlightRecord]

    def as_payload(self) -> dict:
        return {"kind": self.kind, "flights": [f.as_payload() for f in self.flights]}


class FlightBackend:
    """Read-only lookup over the fixture flight file (tab-separated records)."""

    def __init__(self, records: Sequence[FlightRecord]):
        self._records = list(records)

    @classmethod
    def from_file(cls, path: str | Path | None = None) -> "FlightBackend":
        try:
            if path is not None:
                text = Path(path).read_text()
            else:
                text = resources.files("multislu").joinpath("data/flights.txt").read_text()
        except OSError as exc:
            raise FlightBackendError(f"flight database unavailable: {exc}") from exc
        records = []
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 7:
                raise FlightBackendError(f"flights line {ln}: expected 7 columns, got {len(cols)}")
            records.append(FlightRecord(*cols))
        return cls(records)

    def __len__(self) -> int:
        return len(self._records)

    def search(self, query: FlightQuery) -> FlightResult:
        if not query.complete:
            return FlightResult("insufficient_slots", [])
        f = query.fields
        out = []
        for r in self._records:
            if "fromloc" in f and r.from_city != f["fromloc"]:
                continue
            if "toloc" in f and r.to_city != f["toloc"]:
                continue
            if "depart_date" in f and r.depart != f["depart_date"]:
                continue
            if "return_date" in f and r.ret != f["return_date"]:
                continue
            if "airline" in f and r.airline != f["airline"]:
                continue
            if "flight_type" in f and r.flight_type != f["flight_type"]:
                continue
            out.append(r)
        return FlightResult("ok", out)


def flight_search(query: FlightQuery, backend: FlightBackend | None) -> FlightResult:
    """Filter-by-fields lookup with stable (file) ordering.

    An incomplete query is answered with kind "insufficient_slots"; a missing
    backend raises FlightBackendError, which is a transport failure and not
    an empty result.
    """
    if backend is None:
        raise FlightBackendError("no flight backend configured")
    return backend.search(query)
