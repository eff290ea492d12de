"""Scalar reward over a masked slot matrix, and the Boltzmann weighting.

The reward runs an LSTM over the rows of the masked matrix, projecting each
step to a scalar, which yields one feature per slot row.  Adding the matrix's
projection onto the feedback feature vector, applying a final linear layer,
and squashing through softsign gives a score in (-1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import (
    DimensionError,
    LstmWeights,
    Tensor,
    add,
    concat,
    init_lstm,
    lstm_cell,
    matmul,
    softsign,
    xavier,
    xavier_vec,
)


@dataclass
class RewardParams:
    row_lstm: LstmWeights  # input m, hidden h_r
    step_w: Tensor  # (h_r,)
    step_b: Tensor  # scalar
    out_w: Tensor  # (k,)
    out_b: Tensor  # scalar

    @property
    def k(self) -> int:
        return self.out_w.shape[0]

    @property
    def m(self) -> int:
        return self.row_lstm.input_size

    def named(self, prefix: str = "reward") -> dict[str, Tensor]:
        return {
            f"{prefix}.row_lstm.w_x": self.row_lstm.w_x,
            f"{prefix}.row_lstm.w_h": self.row_lstm.w_h,
            f"{prefix}.row_lstm.b": self.row_lstm.b,
            f"{prefix}.step_w": self.step_w,
            f"{prefix}.step_b": self.step_b,
            f"{prefix}.out_w": self.out_w,
            f"{prefix}.out_b": self.out_b,
        }

    def load_named(self, prefix: str, tensors: dict[str, Tensor]) -> None:
        self.row_lstm = LstmWeights(
            tensors[f"{prefix}.row_lstm.w_x"],
            tensors[f"{prefix}.row_lstm.w_h"],
            tensors[f"{prefix}.row_lstm.b"],
        )
        self.step_w = tensors[f"{prefix}.step_w"]
        self.step_b = tensors[f"{prefix}.step_b"]
        self.out_w = tensors[f"{prefix}.out_w"]
        self.out_b = tensors[f"{prefix}.out_b"]


def init_reward_params(
    m: int, k: int, hidden: int, rng: np.random.Generator
) -> RewardParams:
    return RewardParams(
        row_lstm=init_lstm(m, hidden, rng),
        step_w=xavier_vec(hidden, 1, rng),
        step_b=Tensor(0.0),
        out_w=xavier_vec(k, 1, rng),
        out_b=Tensor(0.0),
    )


def reward(masked: np.ndarray, c_feedback: np.ndarray, params: RewardParams) -> Tensor:
    """Score a masked slot matrix against the current feedback features.

    `masked` (k, m) and `c_feedback` (m,) enter as constants; only the reward
    parameters carry gradient.  Output is a scalar tensor strictly inside
    (-1, 1).
    """
    masked = np.asarray(masked, dtype=np.float64)
    c_feedback = np.asarray(c_feedback, dtype=np.float64)
    if masked.ndim != 2 or masked.shape != (params.k, params.m):
        raise DimensionError(
            f"masked matrix shape {masked.shape}, expected ({params.k}, {params.m})"
        )
    if c_feedback.shape != (params.m,):
        raise DimensionError(
            f"feedback feature shape {c_feedback.shape}, expected ({params.m},)"
        )
    h_size = params.row_lstm.hidden_size
    zeros = Tensor(np.zeros(h_size))
    h, c = zeros, zeros
    steps = []
    for i in range(params.k):
        h, c = lstm_cell(Tensor(masked[i]), h, c, params.row_lstm)
        steps.append(_as_vec(add(matmul(params.step_w, h), params.step_b)))
    row_feats = concat(steps)  # (k,), one scalar feature per slot row
    proj = Tensor(masked @ c_feedback)  # (k,), constant w.r.t. params
    pre = add(matmul(params.out_w, add(row_feats, proj)), params.out_b)
    return softsign(pre)


def _as_vec(s: Tensor) -> Tensor:
    # Scalar-to-length-1 view: matmul of two vectors is 0-d, concat wants 1-d.
    from .numerics import GradTape

    out = np.atleast_1d(s.data).copy()

    def vjp(g):
        return (g.reshape(s.data.shape),)

    t = Tensor._wrap(out)
    tape = GradTape.current()
    if tape is not None:
        tape.record(t, (s,), vjp)
    return t


def boltzmann(rewards: Sequence[float] | np.ndarray) -> np.ndarray:
    """exp(r_i) / Σ exp(r_j), max-shifted so any finite magnitudes are safe."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise DimensionError(f"boltzmann expects a non-empty vector, got shape {r.shape}")
    shifted = r - r.max()
    e = np.exp(shifted)
    return e / e.sum()
