"""Recurrent Bernoulli mask policy over slot candidates.

Each feedback round the policy sees the query and feedback feature vectors,
pushes them through a small MLP, advances an LSTM whose input is the MLP
output concatenated with the previous binary mask, and emits one keep/drop
probability per slot label.  Sampling (or thresholding) those probabilities
gives the mask that selects candidate rows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

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
    mul,
    neg,
    sigmoid,
    softplus,
    tanh,
    tsum,
    xavier,
)


class SampleMode(enum.Enum):
    SAMPLE = "sample"
    GREEDY = "greedy"


class PolicyInputError(Exception):
    pass


@dataclass
class PolicyParams:
    mlp_w1: Tensor  # (2m, g_hidden)
    mlp_b1: Tensor  # (g_hidden,)
    mlp_w2: Tensor  # (g_hidden, m)
    mlp_b2: Tensor  # (m,)
    lstm: LstmWeights  # input m + k, hidden h_pol
    out_w: Tensor  # (h_pol, k)
    out_b: Tensor  # (k,)

    @property
    def m(self) -> int:
        return self.mlp_w2.shape[1]

    @property
    def k(self) -> int:
        return self.out_w.shape[1]

    def named(self, prefix: str = "policy") -> dict[str, Tensor]:
        return {
            f"{prefix}.mlp_w1": self.mlp_w1,
            f"{prefix}.mlp_b1": self.mlp_b1,
            f"{prefix}.mlp_w2": self.mlp_w2,
            f"{prefix}.mlp_b2": self.mlp_b2,
            f"{prefix}.lstm.w_x": self.lstm.w_x,
            f"{prefix}.lstm.w_h": self.lstm.w_h,
            f"{prefix}.lstm.b": self.lstm.b,
            f"{prefix}.out_w": self.out_w,
            f"{prefix}.out_b": self.out_b,
        }

    def load_named(self, prefix: str, tensors: dict[str, Tensor]) -> None:
        self.mlp_w1 = tensors[f"{prefix}.mlp_w1"]
        self.mlp_b1 = tensors[f"{prefix}.mlp_b1"]
        self.mlp_w2 = tensors[f"{prefix}.mlp_w2"]
        self.mlp_b2 = tensors[f"{prefix}.mlp_b2"]
        self.lstm = LstmWeights(
            tensors[f"{prefix}.lstm.w_x"],
            tensors[f"{prefix}.lstm.w_h"],
            tensors[f"{prefix}.lstm.b"],
        )
        self.out_w = tensors[f"{prefix}.out_w"]
        self.out_b = tensors[f"{prefix}.out_b"]


def init_policy_params(
    m: int, k: int, g_hidden: int, lstm_hidden: int, rng: np.random.Generator
) -> PolicyParams:
    return PolicyParams(
        mlp_w1=xavier(2 * m, g_hidden, rng),
        mlp_b1=Tensor(np.zeros(g_hidden)),
        mlp_w2=xavier(g_hidden, m, rng),
        mlp_b2=Tensor(np.zeros(m)),
        lstm=init_lstm(m + k, lstm_hidden, rng),
        out_w=xavier(lstm_hidden, k, rng),
        out_b=Tensor(np.zeros(k)),
    )


@dataclass
class MaskState:
    """Mask, its probabilities, and the recurrent carry after one round.

    `mask` is the committed binary decision (int8).  `probs` are the keep
    probabilities it was drawn from.  `hidden` is the (h, c) LSTM carry as
    live tensors so gradients flow across rounds; the binary mask itself
    re-enters the next step as a constant.
    """

    mask: np.ndarray  # (k,) int8
    probs: np.ndarray  # (k,) float64
    hidden: tuple[Tensor, Tensor]


def initial_mask_state(first_mask: np.ndarray, lstm_hidden: int) -> MaskState:
    """State before any feedback: the given mask, unit probs, zero carry."""
    mask = np.asarray(first_mask, dtype=np.int8).copy()
    zeros = Tensor(np.zeros(lstm_hidden))
    return MaskState(mask, np.ones(mask.shape[0]), (zeros, zeros))


def mask_logits(
    c_query: Tensor, c_feedback: Tensor, prev: MaskState, params: PolicyParams
) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    """Keep/drop logits for one round, plus the advanced LSTM carry."""
    if c_query.shape != (params.m,) or c_feedback.shape != (params.m,):
        raise PolicyInputError(
            f"feature shapes {c_query.shape}/{c_feedback.shape}, expected ({params.m},)"
        )
    if prev.mask.shape != (params.k,):
        raise PolicyInputError(f"mask shape {prev.mask.shape}, expected ({params.k},)")
    g_in = concat([c_query, c_feedback])
    g_hid = tanh(add(matmul(g_in, params.mlp_w1), params.mlp_b1))
    g_out = add(matmul(g_hid, params.mlp_w2), params.mlp_b2)
    x = concat([g_out, Tensor(prev.mask.astype(np.float64))])
    h, c = lstm_cell(x, prev.hidden[0], prev.hidden[1], params.lstm)
    logits = add(matmul(h, params.out_w), params.out_b)
    return logits, (h, c)


def mask_log_prob(logits: Tensor, mask: np.ndarray) -> Tensor:
    """log π(mask | logits) for independent Bernoulli coordinates.

    Uses log σ(z) = -softplus(-z) and log(1-σ(z)) = -softplus(z), folded into
    -Σ softplus((1 - 2 s_i) z_i), which never evaluates log near zero.
    """
    sign = Tensor(1.0 - 2.0 * mask.astype(np.float64))
    return neg(tsum(softplus(mul(sign, logits))))


def policy_step(
    c_query: Tensor,
    c_feedback: Tensor,
    prev: MaskState,
    params: PolicyParams,
    mode: SampleMode,
    rng: np.random.Generator | None = None,
) -> tuple[MaskState, Tensor]:
    """Advance the policy one round; returns the new state and log π(mask).

    SAMPLE draws each coordinate Bernoulli(p) from `rng`; GREEDY keeps any
    coordinate with p >= 0.5 (ties keep).  The returned log-prob is a live
    scalar tensor when a tape is open.
    """
    logits, hidden = mask_logits(c_query, c_feedback, prev, params)
    probs = sigmoid(logits).data
    if mode is SampleMode.SAMPLE:
        if rng is None:
            raise PolicyInputError("SAMPLE mode requires an rng")
        mask = (rng.random(probs.shape[0]) < probs).astype(np.int8)
    else:
        mask = (probs >= 0.5).astype(np.int8)
    log_prob = mask_log_prob(logits, mask)
    return MaskState(mask, probs.copy(), hidden), log_prob


@dataclass
class MaskedSlotMatrix:
    """A candidate matrix with a mask applied: rows are kept verbatim or zeroed."""

    matrix: np.ndarray  # (k, m)
    mask: np.ndarray  # (k,) int8
    source: np.ndarray  # the unmasked candidate matrix


def mask_candidates(candidates: np.ndarray, mask: np.ndarray) -> MaskedSlotMatrix:
    """Row-select a candidate matrix: kept rows are bitwise copies, dropped rows zero."""
    candidates = np.asarray(candidates, dtype=np.float64)
    mask = np.asarray(mask)
    if candidates.ndim != 2:
        raise DimensionError(f"candidate matrix must be 2-d, got shape {candidates.shape}")
    if mask.shape != (candidates.shape[0],):
        raise DimensionError(
            f"mask shape {mask.shape} does not match {candidates.shape[0]} candidate rows"
        )
    if not np.all((mask == 0) | (mask == 1)):
        raise PolicyInputError("mask entries must be 0 or 1")
    out = np.zeros_like(candidates)
    keep = mask.astype(bool)
    out[keep] = candidates[keep]
    return MaskedSlotMatrix(out, mask.astype(np.int8).copy(), candidates)
