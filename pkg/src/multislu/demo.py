"""Scripted multiround session replay with a deterministically overfit tagger.

A scenario fixture holds one opening query, a list of feedback rounds, and
the expected cumulative slot table per round.  The demo builds a tiny model,
fits the tagger on exactly the token sequences the rollout will see (the
query alone plus each query+feedback concatenation), neutralizes the mask
policy so every candidate is kept, then replays the scenario round by round
printing the live table, rendered query, and flight hits.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import FeedbackKind, FeedbackRound, LabelSet, TaggedUtterance
from .numerics import AdamState, GradTape, Tensor, adam_step
from .policy import SampleMode
from .slot_table import FlightBackend, flight_search, load_templates, render_query
from .tagger import decode_tags, sequence_nll
from .trainer import (
    SluModel,
    TrainConfig,
    TrainerError,
    feedback_rollout,
    init_model,
    start_rollout,
)

_PACKAGED = {"figure1": "data/figure1_scenario.json"}


@dataclass
class Scenario:
    name: str
    label_set: LabelSet
    query: TaggedUtterance
    rounds: tuple[FeedbackRound, ...]
    expected_tables: tuple[dict, ...]  # cumulative, index 0 = query-only


def load_scenario(name_or_path: str) -> Scenario:
    if name_or_path in _PACKAGED:
        text = resources.files("multislu").joinpath(_PACKAGED[name_or_path]).read_text()
    else:
        text = Path(name_or_path).read_text()
    obj = json.loads(text)
    rounds = tuple(
        FeedbackRound(
            TaggedUtterance(tuple(r["tokens"]), tuple(r["tags"])), FeedbackKind(r["kind"])
        )
        for r in obj["rounds"]
    )
    return Scenario(
        name=obj["name"],
        label_set=LabelSet(obj["labels"]),
        query=TaggedUtterance(tuple(obj["query"]["tokens"]), tuple(obj["query"]["tags"])),
        rounds=rounds,
        expected_tables=tuple(dict(t) for t in obj["expected_tables"]),
    )


def _scenario_pairs(scenario: Scenario) -> list[tuple[tuple, tuple]]:
    pairs = [(scenario.query.tokens, scenario.query.tags)]
    for r in scenario.rounds:
        pairs.append(
            (scenario.query.tokens + r.text.tokens, scenario.query.tags + r.text.tags)
        )
    return pairs


def build_demo_model(scenario: Scenario, seed: int = 7, max_epochs: int = 400) -> SluModel:
    """Tiny model whose tagger is fit to the scenario's exact sequences.

    The policy head is zeroed, which pins every keep-probability at exactly
    0.5; greedy decoding keeps ties, so the replay keeps every candidate and
    the table reflects the tagger alone.  Raises TrainerError if the tagger
    fails to reproduce the gold tags, since the replay would be meaningless.
    """
    vocab = {"<unk>": 0}
    for tokens, _ in _scenario_pairs(scenario):
        for tok in tokens:
            if tok not in vocab:
                vocab[tok] = len(vocab)
    config = TrainConfig(
        k_labels=scenario.label_set.k,
        m_embed=12,
        enc_hidden=8,
        tagger_hidden=10,
        policy_g_hidden=6,
        policy_lstm_hidden=6,
        reward_hidden=6,
        seed=seed,
    )
    rng = np.random.default_rng(seed)
    model = init_model(scenario.label_set, vocab, config, rng)
    model.policy.out_w = Tensor(np.zeros_like(model.policy.out_w.data))
    model.policy.out_b = Tensor(np.zeros_like(model.policy.out_b.data))

    pairs = _scenario_pairs(scenario)
    adam = AdamState(lr=0.05)
    for _ in range(max_epochs):
        for tokens, tags in pairs:
            named = model.tagger.named("tagger")
            names = list(named.keys())
            with GradTape() as tape:
                loss = sequence_nll(tokens, tags, model.tagger)
            grads = tape.gradients(loss, [named[n] for n in names])
            adam_step(adam, named, dict(zip(names, grads)))
            model.tagger.load_named("tagger", named)
        if all(decode_tags(t, model.tagger) == list(g) for t, g in pairs):
            return model
    raise TrainerError(
        f"demo tagger failed to fit scenario {scenario.name!r} within {max_epochs} epochs"
    )


def _format_table(table) -> str:
    rows = [f"{r['label']}={r['value']} (round {r['source_round']})" for r in table.as_payload()]
    return " | ".join(rows) if rows else "(empty)"


def run_demo(scenario: Scenario, seed: int = 7, stream=None) -> dict:
    """Replay the scenario; prints per-round state and returns the final table."""
    out = stream or sys.stdout
    model = build_demo_model(scenario, seed)
    backend = FlightBackend.from_file()
    templates = load_templates()

    def show(round_index: int, text: str, table) -> None:
        q = render_query(table, templates)
        res = flight_search(q, backend)
        print(f"round {round_index}  user: {text}", file=out)
        print(f"  table:  {_format_table(table)}", file=out)
        print(f"  query:  {q.text}", file=out)
        if res.kind == "ok":
            print(f"  flights: {len(res.flights)} match", file=out)
        else:
            print(f"  flights: ({res.kind})", file=out)

    state, _ = start_rollout(model, scenario.query.tokens)
    show(0, scenario.query.text, state.table)
    for t, r in enumerate(scenario.rounds, start=1):
        state, _ = feedback_rollout(model, state, r.text.tokens, SampleMode.GREEDY)
        show(t, r.text.text, state.table)

    final = state.table.values_by_label()
    expected = scenario.expected_tables[-1]
    ok = final == expected
    print(f"replay {'matches' if ok else 'DIVERGES FROM'} the scripted outcome", file=out)
    if not ok:
        print(f"  expected: {expected}", file=out)
        print(f"  got:      {final}", file=out)
    return {"final_table": final, "expected": expected, "ok": ok}
