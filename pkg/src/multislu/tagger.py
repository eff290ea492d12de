"""IOB slot tagging over query + feedback, and slot candidate extraction.

The tagger is an attention bi-LSTM: token embeddings feed forward/backward
LSTMs, each position attends additively over all positions, and the
concatenated [state, context] is projected to per-tag logits.  The candidate
matrix averages the *input token embeddings* of every span tagged with a
label; labels with no tagged tokens keep an all-zero row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import IobValidationError, LabelSet, iob_spans, validate_iob
from .numerics import (
    GradTape,
    LstmWeights,
    Tensor,
    add,
    concat,
    init_lstm,
    log_softmax_rows,
    lstm_cell,
    matmul,
    no_grad,
    row,
    softmax1d,
    stack_rows,
    take_rows,
    tanh,
    tsum,
    xavier,
    xavier_vec,
)
from .encoders import UNK, token_indices


class TaggerInputError(Exception):
    pass


@dataclass
class TaggerParams:
    vocab: dict[str, int]
    label_set: LabelSet
    embedding: Tensor  # (V, m); rows double as the candidate-matrix source
    fwd: LstmWeights
    bwd: LstmWeights
    attn_w1: Tensor  # (2h, a) keys
    attn_w2: Tensor  # (2h, a) queries
    attn_b: Tensor  # (a,)
    attn_v: Tensor  # (a,)
    out_w: Tensor  # (2h + 2h, n_tags)
    out_b: Tensor  # (n_tags,)

    @property
    def m(self) -> int:
        return self.embedding.shape[1]

    @property
    def tag_alphabet(self) -> list[str]:
        return self.label_set.iob_tags()

    def named(self, prefix: str = "tagger") -> dict[str, Tensor]:
        return {
            f"{prefix}.embedding": self.embedding,
            f"{prefix}.fwd.w_x": self.fwd.w_x,
            f"{prefix}.fwd.w_h": self.fwd.w_h,
            f"{prefix}.fwd.b": self.fwd.b,
            f"{prefix}.bwd.w_x": self.bwd.w_x,
            f"{prefix}.bwd.w_h": self.bwd.w_h,
            f"{prefix}.bwd.b": self.bwd.b,
            f"{prefix}.attn_w1": self.attn_w1,
            f"{prefix}.attn_w2": self.attn_w2,
            f"{prefix}.attn_b": self.attn_b,
            f"{prefix}.attn_v": self.attn_v,
            f"{prefix}.out_w": self.out_w,
            f"{prefix}.out_b": self.out_b,
        }

    def load_named(self, prefix: str, tensors: dict[str, Tensor]) -> None:
        self.embedding = tensors[f"{prefix}.embedding"]
        self.fwd = LstmWeights(
            tensors[f"{prefix}.fwd.w_x"], tensors[f"{prefix}.fwd.w_h"], tensors[f"{prefix}.fwd.b"]
        )
        self.bwd = LstmWeights(
            tensors[f"{prefix}.bwd.w_x"], tensors[f"{prefix}.bwd.w_h"], tensors[f"{prefix}.bwd.b"]
        )
        self.attn_w1 = tensors[f"{prefix}.attn_w1"]
        self.attn_w2 = tensors[f"{prefix}.attn_w2"]
        self.attn_b = tensors[f"{prefix}.attn_b"]
        self.attn_v = tensors[f"{prefix}.attn_v"]
        self.out_w = tensors[f"{prefix}.out_w"]
        self.out_b = tensors[f"{prefix}.out_b"]


def init_tagger_params(
    vocab: dict[str, int],
    label_set: LabelSet,
    m: int,
    hidden: int,
    rng: np.random.Generator,
    attn_dim: int | None = None,
) -> TaggerParams:
    if UNK not in vocab:
        raise TaggerInputError(f"vocab must contain the {UNK!r} token")
    a = attn_dim or hidden
    n_tags = len(label_set.iob_tags())
    return TaggerParams(
        vocab=vocab,
        label_set=label_set,
        embedding=xavier(len(vocab), m, rng),
        fwd=init_lstm(m, hidden, rng),
        bwd=init_lstm(m, hidden, rng),
        attn_w1=xavier(2 * hidden, a, rng),
        attn_w2=xavier(2 * hidden, a, rng),
        attn_b=Tensor(np.zeros(a)),
        attn_v=xavier_vec(a, 1, rng),
        out_w=xavier(4 * hidden, n_tags, rng),
        out_b=Tensor(np.zeros(n_tags)),
    )


def _tagger_logits(tokens: Sequence[str], params: TaggerParams) -> Tensor:
    if not tokens:
        raise TaggerInputError("cannot tag an empty token sequence")
    n = len(tokens)
    h_size = params.fwd.hidden_size
    idx = token_indices(tokens, params.vocab)
    emb = take_rows(params.embedding, idx)

    zeros = Tensor(np.zeros(h_size))
    h, c = zeros, zeros
    fwd_states = []
    for t in range(n):
        h, c = lstm_cell(row(emb, t), h, c, params.fwd)
        fwd_states.append(h)
    h, c = zeros, zeros
    bwd_states: list[Tensor] = [None] * n  # type: ignore[list-item]
    for t in reversed(range(n)):
        h, c = lstm_cell(row(emb, t), h, c, params.bwd)
        bwd_states[t] = h
    states = stack_rows([concat([f, b]) for f, b in zip(fwd_states, bwd_states)])  # (n, 2h)

    keys = matmul(states, params.attn_w1)  # (n, a)
    queries = matmul(states, params.attn_w2)  # (n, a)
    rows = []
    for i in range(n):
        scores = matmul(tanh(add(add(keys, row(queries, i)), params.attn_b)), params.attn_v)
        alpha = softmax1d(scores)
        context = matmul(alpha, states)  # (2h,)
        rows.append(concat([row(states, i), context]))
    features = stack_rows(rows)  # (n, 4h)
    return add(matmul(features, params.out_w), params.out_b)


def tag_tokens(tokens: Sequence[str], params: TaggerParams) -> np.ndarray:
    """Per-token probability distributions over the IOB tag alphabet.

    Returns an (n, n_tags) array; each row sums to 1 within 1e-9.  Decoding
    is forward-only, so the computation runs off-tape.
    """
    with no_grad():
        logits = _tagger_logits(tokens, params)
        log_probs = log_softmax_rows(logits)
    return np.exp(log_probs.data)


def decode_tags(tokens: Sequence[str], params: TaggerParams) -> list[str]:
    """Greedy argmax decode, canonicalized so the output is always valid IOB.

    An I-X without a matching B-X/I-X predecessor is rewritten to B-X, which
    is what untrained models need to keep the downstream span extraction
    total.
    """
    probs = tag_tokens(tokens, params)
    alphabet = params.tag_alphabet
    tags = [alphabet[int(i)] for i in probs.argmax(axis=1)]
    prev = None
    for i, tag in enumerate(tags):
        if tag.startswith("I-") and prev != tag[2:]:
            tags[i] = "B-" + tag[2:]
        prev = tags[i][2:] if tags[i] != "O" else None
    return tags


def sequence_nll(tokens: Sequence[str], gold_tags: Sequence[str], params: TaggerParams) -> Tensor:
    """Mean per-token negative log-likelihood; the pretraining loss."""
    if len(tokens) != len(gold_tags):
        raise TaggerInputError(f"{len(tokens)} tokens vs {len(gold_tags)} tags")
    alphabet = params.tag_alphabet
    tag_index = {t: i for i, t in enumerate(alphabet)}
    logits = _tagger_logits(tokens, params)
    log_probs = log_softmax_rows(logits)
    picked = take_cols(log_probs, [tag_index[t] for t in gold_tags])
    n = len(tokens)
    return tsum(picked) * Tensor(-1.0 / n)


def take_cols(mat: Tensor, cols: Sequence[int]) -> Tensor:
    """One element per row of `mat`: row i, column cols[i]."""
    n = mat.shape[0]
    idx = np.asarray(cols, dtype=np.intp)
    out = mat.data[np.arange(n), idx].copy()

    def vjp(g):
        full = np.zeros_like(mat.data)
        full[np.arange(n), idx] = g
        return (full,)

    tape = GradTape.current()
    result = Tensor._wrap(out)
    if tape is not None:
        tape.record(result, (mat,), vjp)
    return result


# ---------------------------------------------------------------------------
# Slot candidate matrix


@dataclass(frozen=True)
class SlotSpan:
    start: int
    end: int  # half-open
    text: str


@dataclass
class SlotCandidateMatrix:
    """Per-label mean token embeddings with span provenance.

    Row i is the arithmetic mean of the embeddings of every token inside a
    span labeled ``label_set.label(i)``; labels with no tagged tokens keep an
    exactly-zero row.  A label's candidate surface value is its *last* span in
    token order, so feedback text (appended after the query) wins.
    """

    matrix: np.ndarray  # (k, m)
    provenance: dict[str, list[SlotSpan]]
    label_set: LabelSet

    def value_for(self, label: str) -> str:
        return self.provenance[label][-1].text


def build_slot_candidates(
    tokens: Sequence[str],
    decoded_tags: Sequence[str],
    embeddings: np.ndarray,
    label_set: LabelSet,
) -> SlotCandidateMatrix:
    """Average labeled token embeddings into a (k, m) candidate matrix.

    `embeddings` holds one row per token.  Tags must be valid IOB; a
    violation raises IobValidationError.
    """
    if len(tokens) != len(decoded_tags):
        raise TaggerInputError(f"{len(tokens)} tokens vs {len(decoded_tags)} tags")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[0] != len(tokens):
        raise TaggerInputError(
            f"embeddings rows {embeddings.shape[0]} != token count {len(tokens)}"
        )
    bad = validate_iob(decoded_tags)
    if bad:
        raise IobValidationError(f"IOB violations at indices {bad}")

    k, m = label_set.k, embeddings.shape[1]
    matrix = np.zeros((k, m))
    provenance: dict[str, list[SlotSpan]] = {}
    members: dict[str, list[int]] = {}
    for label, s, e in iob_spans(tokens, decoded_tags):
        if label not in label_set:
            continue  # tagger alphabet can exceed the working label set
        provenance.setdefault(label, []).append(
            SlotSpan(s, e, " ".join(tokens[s:e]))
        )
        members.setdefault(label, []).extend(range(s, e))
    for label, idx in members.items():
        matrix[label_set.index(label)] = embeddings[idx].mean(axis=0)
    return SlotCandidateMatrix(matrix, provenance, label_set)


def token_embeddings(tokens: Sequence[str], params: TaggerParams) -> np.ndarray:
    """Input embedding rows for a token sequence (constant, no tape)."""
    idx = token_indices(tokens, params.vocab)
    return params.embedding.data[idx].copy()
