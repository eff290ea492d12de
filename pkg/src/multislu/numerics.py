"""Dense float64 tensors, a reverse-mode gradient tape, Adam, and a gradient checker.

Design constraints:

* Everything is float64.  Models here are tiny, so precision beats speed.
* Gradients come from an explicit tape (`GradTape`) recording primitive ops in
  execution order; replaying the tape backward is deterministic, so identical
  inputs give bitwise-identical gradients.
* Ops executed while no tape is active are pure forward computations.
* `grad_check` is the independent oracle: central finite differences against
  the tape, with the relative-error denominator floored at 1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NumericsError(Exception):
    """Numerical failure (non-finite value, bad domain) in a kernel op."""


class DimensionError(NumericsError):
    """Operand shapes are inconsistent."""


# ---------------------------------------------------------------------------
# Tensor and tape


class Tensor:
    """Immutable dense float64 array.

    Construct from any array-like; data is copied so the tensor cannot alias
    caller-owned buffers.  Arithmetic operators record onto the active
    GradTape when one is open.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.array(data, dtype=np.float64)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path for op outputs: arr is freshly allocated, skip the copy.
        t = cls.__new__(cls)
        t.data = arr
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


@dataclass
class TapeRecord:
    out: Tensor
    inputs: tuple[Tensor, ...]
    # Maps the output cotangent to one cotangent per input (None = no flow).
    vjp: Callable[[np.ndarray], tuple]


class GradTape:
    """Ordered record of primitive ops, replayed backward for gradients.

    Records hold strong references to their tensors, so object identity is a
    valid node key for the lifetime of the tape.
    """

    _stack: list["GradTape | None"] = []

    def __init__(self):
        self._records: list[TapeRecord] = []

    def __enter__(self) -> "GradTape":
        GradTape._stack.append(self)
        return self

    def __exit__(self, *exc):
        GradTape._stack.pop()
        return False

    @classmethod
    def current(cls) -> "GradTape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        self._records.append(TapeRecord(out, inputs, vjp))

    def gradients(self, output: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradient of a scalar `output` with respect to each source tensor.

        Sources that the output does not depend on get zero gradients of the
        source's shape.  The walk is a single reverse pass over the records,
        accumulating cotangents in insertion order (deterministic).
        """
        if output.data.ndim != 0 and output.data.size != 1:
            raise DimensionError(
                f"gradients require a scalar output, got shape {output.shape}"
            )
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for rec in reversed(self._records):
            g_out = grads.get(id(rec.out))
            if g_out is None:
                continue
            for t, g in zip(rec.inputs, rec.vjp(g_out)):
                if g is None:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = g if acc is None else acc + g
        return [
            grads[id(s)] if id(s) in grads else np.zeros_like(s.data) for s in sources
        ]


class no_grad:
    """Suspend tape recording: ops inside compute values but record nothing.

    Pushes a blank frame so `GradTape.current()` is None even when an outer
    tape is active; a tape entered inside re-enables recording.  Forward-only
    consumers of Tensor math (greedy decoding, evaluation) use this to keep
    the surrounding tape free of records no gradient will ever reach.
    """

    def __enter__(self) -> "no_grad":
        GradTape._stack.append(None)
        return self

    def __exit__(self, *exc):
        GradTape._stack.pop()
        return False


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted cotangent back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _emit(out_arr: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor._wrap(out_arr)
    tape = GradTape.current()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


# ---------------------------------------------------------------------------
# Primitive ops


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if np.any(b.data == 0.0):
        raise NumericsError("division by zero")
    out = a.data / b.data
    return _emit(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _lift(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix/vector product for the 2d/1d shape combinations the models use."""
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul {ad.shape} @ {bd.shape}")
        out = ad @ bd
        vjp = lambda g: (g @ bd.T, ad.T @ g)
    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise DimensionError(f"matmul {ad.shape} @ {bd.shape}")
        out = ad @ bd
        vjp = lambda g: (np.outer(g, bd), ad.T @ g)
    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise DimensionError(f"matmul {ad.shape} @ {bd.shape}")
        out = ad @ bd
        vjp = lambda g: (bd @ g, np.outer(ad, g))
    elif ad.ndim == 1 and bd.ndim == 1:
        if ad.shape[0] != bd.shape[0]:
            raise DimensionError(f"matmul {ad.shape} @ {bd.shape}")
        out = np.array(ad @ bd)
        vjp = lambda g: (g * bd, g * ad)
    else:
        raise DimensionError(f"matmul unsupported ranks {ad.shape} @ {bd.shape}")
    return _emit(out, (a, b), vjp)


def tsum(a, axis=None) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gx = np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.shape).copy(),)

    return _emit(np.asarray(out), (a,), vjp)


def tmean(a) -> Tensor:
    a = _lift(a)
    n = a.data.size
    out = np.asarray(a.data.mean())
    return _emit(out, (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def _expit(x: np.ndarray) -> np.ndarray:
    # Stable logistic: never overflows, saturates cleanly to {0, 1}.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = _expit(np.atleast_1d(a.data)).reshape(a.shape)
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def softsign(a) -> Tensor:
    """x / (1 + |x|): odd, strictly inside (-1, 1) for finite x."""
    a = _lift(a)
    denom = 1.0 + np.abs(a.data)
    out = a.data / denom
    return _emit(out, (a,), lambda g: (g / (denom * denom),))


def softplus(a) -> Tensor:
    """log(1 + e^x), computed stably; gradient is sigmoid(x)."""
    a = _lift(a)
    out = np.logaddexp(0.0, a.data)
    return _emit(out, (a,), lambda g: (g * _expit(np.atleast_1d(a.data)).reshape(a.shape),))


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericsError("exp overflow")
    return _emit(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise NumericsError("log of non-positive value")
    out = np.log(a.data)
    return _emit(out, (a,), lambda g: (g / a.data,))


def concat(parts: Sequence) -> Tensor:
    """Concatenate 1-d tensors."""
    ts = [_lift(p) for p in parts]
    for t in ts:
        if t.ndim != 1:
            raise DimensionError(f"concat expects 1-d tensors, got shape {t.shape}")
    sizes = [t.size for t in ts]
    out = np.concatenate([t.data for t in ts])

    def vjp(g):
        grads = []
        off = 0
        for n in sizes:
            grads.append(g[off : off + n])
            off += n
        return tuple(grads)

    return _emit(out, tuple(ts), vjp)


def narrow(a, start: int, length: int) -> Tensor:
    """Contiguous slice of a 1-d tensor (used to split stacked LSTM gates)."""
    a = _lift(a)
    if a.ndim != 1 or start < 0 or start + length > a.size:
        raise DimensionError(f"narrow({start},{length}) on shape {a.shape}")
    out = a.data[start : start + length].copy()

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start : start + length] = g
        return (full,)

    return _emit(out, (a,), vjp)


def take_rows(a, indices: Sequence[int]) -> Tensor:
    """Gather rows of a 2-d tensor (embedding lookup); backward scatter-adds."""
    a = _lift(a)
    if a.ndim != 2:
        raise DimensionError(f"take_rows expects a matrix, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx].copy()

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(out, (a,), vjp)


def row(a, i: int) -> Tensor:
    """Single row of a 2-d tensor as a 1-d tensor."""
    a = _lift(a)
    if a.ndim != 2:
        raise DimensionError(f"row expects a matrix, got shape {a.shape}")
    out = a.data[i].copy()

    def vjp(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _emit(out, (a,), vjp)


def stack_rows(parts: Sequence) -> Tensor:
    """Stack equal-length 1-d tensors into a matrix, one per row."""
    ts = [_lift(p) for p in parts]
    n = ts[0].size
    for t in ts:
        if t.ndim != 1 or t.size != n:
            raise DimensionError("stack_rows expects equal-length 1-d tensors")
    out = np.stack([t.data for t in ts])

    def vjp(g):
        return tuple(g[i] for i in range(len(ts)))

    return _emit(out, tuple(ts), vjp)


def softmax1d(a) -> Tensor:
    """Softmax over a 1-d tensor, max-shifted for stability."""
    a = _lift(a)
    if a.ndim != 1:
        raise DimensionError(f"softmax1d expects a vector, got shape {a.shape}")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def vjp(g):
        dot = float(np.dot(g, out))
        return (out * (g - dot),)

    return _emit(out, (a,), vjp)


def log_softmax_rows(a) -> Tensor:
    """Row-wise log-softmax of a matrix, max-shifted per row."""
    a = _lift(a)
    if a.ndim != 2:
        raise DimensionError(f"log_softmax_rows expects a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse

    def vjp(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _emit(out, (a,), vjp)


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmWeights:
    """Stacked-gate LSTM weights; gate order along axis 0 is i, f, g, o."""

    w_x: Tensor  # (4h, d)
    w_h: Tensor  # (4h, h)
    b: Tensor  # (4h,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]


def lstm_cell(x, h_prev, c_prev, w: LstmWeights) -> tuple[Tensor, Tensor]:
    """One LSTM step: sigmoid input/forget/output gates, tanh candidate.

    Raises DimensionError naming the offending shapes if `x`/state sizes do
    not match the weights.  With everything zero the output is exactly zero.
    """
    x, h_prev, c_prev = _lift(x), _lift(h_prev), _lift(c_prev)
    h = w.hidden_size
    if x.shape != (w.input_size,):
        raise DimensionError(f"lstm_cell input {x.shape}, weights expect ({w.input_size},)")
    if h_prev.shape != (h,) or c_prev.shape != (h,):
        raise DimensionError(
            f"lstm_cell state shapes {h_prev.shape}/{c_prev.shape}, expected ({h},)"
        )
    z = add(add(matmul(w.w_x, x), matmul(w.w_h, h_prev)), w.b)
    i = sigmoid(narrow(z, 0, h))
    f = sigmoid(narrow(z, h, h))
    g = tanh(narrow(z, 2 * h, h))
    o = sigmoid(narrow(z, 3 * h, h))
    c = add(mul(f, c_prev), mul(i, g))
    h_out = mul(o, tanh(c))
    return h_out, c


def init_lstm(input_size: int, hidden_size: int, rng: np.random.Generator) -> LstmWeights:
    return LstmWeights(
        w_x=xavier(4 * hidden_size, input_size, rng),
        w_h=xavier(4 * hidden_size, hidden_size, rng),
        b=Tensor(np.zeros(4 * hidden_size)),
    )


def xavier(rows: int, cols: int, rng: np.random.Generator) -> Tensor:
    """Xavier-uniform matrix; biases elsewhere start at zero."""
    limit = math.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-limit, limit, size=(rows, cols)))


def xavier_vec(n: int, fan: int, rng: np.random.Generator) -> Tensor:
    limit = math.sqrt(6.0 / (n + fan))
    return Tensor(rng.uniform(-limit, limit, size=n))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter Adam moments keyed by parameter name.

    A parameter whose gradient is exactly zero is skipped outright (moments
    and step count untouched), so a zero gradient is the identity regardless
    of optimizer history.  That guarantee is what makes the trainer's
    expert/policy cancellation check exact.
    """

    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]
) -> dict[str, Tensor]:
    """Bias-corrected Adam update; replaces entries of `params` in place."""
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam grad shape {g.shape} != param {p.shape} for '{name}'")
        if not np.any(g):
            continue
        t = state.t.get(name, 0) + 1
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name] = m
        state.v[name] = v
        state.t[name] = t
        params[name] = Tensor._wrap(new)
    return params


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    worst_index: tuple[int, ...]


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    rel_floor: float = 1e-12,
) -> GradCheckResult:
    """Compare tape gradients of scalar `f(params)` against central differences.

    Relative error per coordinate is |analytic - fd| / max(|analytic|, |fd|,
    rel_floor); the maximum over all coordinates is returned.  A non-finite f
    at a perturbed point raises NumericsError naming the coordinate.
    """
    names = list(params.keys())
    with GradTape() as tape:
        out = f(params)
    analytic = dict(zip(names, tape.gradients(out, [params[n] for n in names])))

    worst = 0.0
    worst_param = ""
    worst_index: tuple[int, ...] = ()
    for name in names:
        base = params[name].data
        an = analytic[name]
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            fplus, fminus = 0.0, 0.0
            for sign in (+1.0, -1.0):
                bumped = base.copy()
                bumped.reshape(-1)[i] = orig + sign * h
                trial = dict(params)
                trial[name] = Tensor._wrap(bumped)
                val = float(f(trial).data)
                if not math.isfinite(val):
                    idx = np.unravel_index(i, base.shape)
                    raise NumericsError(
                        f"non-finite f while perturbing {name}{tuple(int(j) for j in idx)}"
                    )
                if sign > 0:
                    fplus = val
                else:
                    fminus = val
            fd = (fplus - fminus) / (2.0 * h)
            a = float(an.reshape(-1)[i])
            rel = abs(a - fd) / max(abs(a), abs(fd), rel_floor)
            if rel > worst:
                worst = rel
                worst_param = name
                worst_index = tuple(int(j) for j in np.unravel_index(i, base.shape))
    return GradCheckResult(worst, worst_param, worst_index)


def assert_all_finite(params: dict[str, Tensor], context: str = "") -> None:
    """Raise NumericsError naming the first non-finite parameter tensor."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.data)):
            raise NumericsError(f"non-finite parameter '{name}' {context}".strip())
