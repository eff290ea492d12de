"""Feature generator: attention bidirectional LSTM encoders.

Two structurally identical encoders with separate parameters: one encodes the
origin query once per session, the other encodes each feedback round on its
own (the round index never enters the computation).  Both produce a fixed
m-dimensional feature vector: embeddings run through forward and backward
LSTMs, an additive attention head scores each position, and the attention
weighted context is linearly projected to m dims.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import (
    LstmWeights,
    Tensor,
    add,
    concat,
    init_lstm,
    lstm_cell,
    matmul,
    row,
    softmax1d,
    stack_rows,
    take_rows,
    tanh,
    xavier,
    xavier_vec,
)


class EncoderInputError(Exception):
    pass


UNK = "<unk>"


@dataclass
class EncoderParams:
    vocab: dict[str, int]  # token -> embedding row; must contain UNK
    embedding: Tensor  # (V, m)
    fwd: LstmWeights
    bwd: LstmWeights
    attn_w: Tensor  # (2h, a)
    attn_b: Tensor  # (a,)
    attn_v: Tensor  # (a,)
    out_w: Tensor  # (m, 2h)
    out_b: Tensor  # (m,)

    @property
    def m(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden(self) -> int:
        return self.fwd.hidden_size

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.embedding": self.embedding,
            f"{prefix}.fwd.w_x": self.fwd.w_x,
            f"{prefix}.fwd.w_h": self.fwd.w_h,
            f"{prefix}.fwd.b": self.fwd.b,
            f"{prefix}.bwd.w_x": self.bwd.w_x,
            f"{prefix}.bwd.w_h": self.bwd.w_h,
            f"{prefix}.bwd.b": self.bwd.b,
            f"{prefix}.attn_w": self.attn_w,
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
        self.attn_w = tensors[f"{prefix}.attn_w"]
        self.attn_b = tensors[f"{prefix}.attn_b"]
        self.attn_v = tensors[f"{prefix}.attn_v"]
        self.out_w = tensors[f"{prefix}.out_w"]
        self.out_b = tensors[f"{prefix}.out_b"]


def init_encoder_params(
    vocab: dict[str, int],
    m: int,
    hidden: int,
    rng: np.random.Generator,
    attn_dim: int | None = None,
) -> EncoderParams:
    if UNK not in vocab:
        raise EncoderInputError(f"vocab must contain the {UNK!r} token")
    a = attn_dim or hidden
    return EncoderParams(
        vocab=vocab,
        embedding=xavier(len(vocab), m, rng),
        fwd=init_lstm(m, hidden, rng),
        bwd=init_lstm(m, hidden, rng),
        attn_w=xavier(2 * hidden, a, rng),
        attn_b=Tensor(np.zeros(a)),
        attn_v=xavier_vec(a, 1, rng),
        out_w=xavier(m, 2 * hidden, rng),
        out_b=Tensor(np.zeros(m)),
    )


def token_indices(tokens: Sequence[str], vocab: dict[str, int]) -> list[int]:
    unk = vocab[UNK]
    return [vocab.get(t, unk) for t in tokens]


def _bi_lstm_states(emb: Tensor, n: int, params: EncoderParams) -> Tensor:
    """Stack per-position [h_fwd; h_bwd] states into an (n, 2h) matrix."""
    h_size = params.hidden
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
    return stack_rows([concat([f, b]) for f, b in zip(fwd_states, bwd_states)])


def _encode(tokens: Sequence[str], params: EncoderParams) -> Tensor:
    if not tokens:
        raise EncoderInputError("cannot encode an empty token sequence")
    idx = token_indices(tokens, params.vocab)
    emb = take_rows(params.embedding, idx)
    states = _bi_lstm_states(emb, len(tokens), params)  # (n, 2h)
    scores = matmul(tanh(add(matmul(states, params.attn_w), params.attn_b)), params.attn_v)
    alpha = softmax1d(scores)
    context = matmul(alpha, states)  # (2h,)
    return add(matmul(params.out_w, context), params.out_b)


def encode_query(tokens: Sequence[str], params: EncoderParams) -> Tensor:
    """Feature vector (length m) for the origin query; deterministic."""
    return _encode(tokens, params)


def encode_feedback(tokens: Sequence[str], round_index: int, params: EncoderParams) -> Tensor:
    """Feature vector for a single feedback round.

    Only round `round_index`'s text is encoded; earlier rounds do not enter,
    so identical text yields an identical feature at any round.
    """
    if round_index < 1:
        raise EncoderInputError(f"round_index must be >= 1, got {round_index}")
    return _encode(tokens, params)
