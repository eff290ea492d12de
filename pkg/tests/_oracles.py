"""Shared test oracles built from first principles, independent of the trainer."""

import numpy as np

from multislu.corpus import LabelSet, MultiRoundSample
from multislu.policy import mask_candidates
from multislu.slot_table import SlotFillingTable, update_table
from multislu.tagger import SlotCandidateMatrix, SlotSpan


def delta_candidates(
    values: dict[str, str], label_set: LabelSet, rng: np.random.Generator, m: int = 4
) -> SlotCandidateMatrix:
    """Candidate matrix carrying exactly `values`, with random non-zero rows."""
    matrix = np.zeros((label_set.k, m))
    provenance = {}
    for label, value in values.items():
        row = rng.normal(size=m)
        while not np.any(row):
            row = rng.normal(size=m)
        matrix[label_set.index(label)] = row
        provenance[label] = [SlotSpan(0, 1, value)]
    return SlotCandidateMatrix(matrix, provenance, label_set)


def presence_mask(cand: SlotCandidateMatrix) -> np.ndarray:
    return np.any(cand.matrix != 0.0, axis=1).astype(np.int8)


def replay_gold_deltas(
    sample: MultiRoundSample, label_set: LabelSet, rng: np.random.Generator
) -> list[SlotFillingTable]:
    """Apply each round's gold delta through update_table; one table per round.

    Round 0 writes the origin table; round t writes only the entries that
    changed between gold_tables[t-1] and gold_tables[t].  If the update
    semantics are correct, table t's values equal gold_tables[t] exactly.
    """
    tables = []
    cand0 = delta_candidates(dict(sample.gold_tables[0]), label_set, rng)
    table = update_table(
        SlotFillingTable.empty(label_set), mask_candidates(cand0.matrix, presence_mask(cand0)),
        cand0, 0,
    )
    tables.append(table)
    for t in range(1, len(sample.gold_tables)):
        prev_gold, cur_gold = sample.gold_tables[t - 1], sample.gold_tables[t]
        delta = {l: v for l, v in cur_gold.items() if prev_gold.get(l) != v}
        cand = delta_candidates(delta, label_set, rng)
        table = update_table(table, mask_candidates(cand.matrix, presence_mask(cand)), cand, t)
        tables.append(table)
    return tables
