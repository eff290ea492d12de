"""Tape gradients, optimizer arithmetic, and the LSTM cell.

The LSTM and Adam tests compare against independent plain-numpy references
written out in full here, not against the module under test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multislu.numerics import (
    AdamState,
    DimensionError,
    GradTape,
    LstmWeights,
    NumericsError,
    Tensor,
    adam_step,
    add,
    assert_all_finite,
    concat,
    div,
    exp,
    grad_check,
    init_lstm,
    log,
    log_softmax_rows,
    lstm_cell,
    matmul,
    mul,
    narrow,
    neg,
    no_grad,
    row,
    sigmoid,
    softmax1d,
    softplus,
    softsign,
    stack_rows,
    sub,
    take_rows,
    tanh,
    tmean,
    tsum,
    xavier,
)

# Primitive gradients on well-scaled inputs resolve far below this.
PRIM_TOL = 1e-6


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def ref_lstm(x, h, c, wx, wh, b):
    """Stacked-gate LSTM step in plain numpy; gate order i, f, g, o."""
    hsz = wh.shape[1]
    z = wx @ x + wh @ h + b
    i = _sig(z[:hsz])
    f = _sig(z[hsz : 2 * hsz])
    g = np.tanh(z[2 * hsz : 3 * hsz])
    o = _sig(z[3 * hsz :])
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


class TestTensor:
    def test_copies_input(self):
        src = np.ones(3)
        t = Tensor(src)
        src[0] = 9.0
        assert t.data[0] == 1.0

    def test_item_requires_scalar(self):
        assert Tensor(2.5).item() == 2.5
        with pytest.raises(DimensionError):
            Tensor([1.0, 2.0]).item()

    def test_operators_match_functions(self):
        a, b = Tensor([1.0, -2.0]), Tensor([3.0, 0.5])
        assert np.array_equal((a + b).data, add(a, b).data)
        assert np.array_equal((a - b).data, sub(a, b).data)
        assert np.array_equal((a * b).data, mul(a, b).data)
        assert np.array_equal((a / b).data, div(a, b).data)
        assert np.array_equal((-a).data, neg(a).data)


class TestTape:
    def test_untouched_source_gets_zeros(self):
        a, b = Tensor([1.0, 2.0]), Tensor([[3.0, 4.0]])
        with GradTape() as tape:
            out = tsum(mul(a, a))
        ga, gb = tape.gradients(out, [a, b])
        assert np.allclose(ga, 2.0 * a.data)
        assert np.array_equal(gb, np.zeros((1, 2)))

    def test_ops_outside_tape_do_not_record(self):
        a = Tensor([1.0, 2.0])
        tape = GradTape()
        with tape:
            pass
        mul(a, a)  # no active tape: must stay off the record
        assert tape._records == []

    def test_reentering_a_tape_appends(self):
        # The trainer closes the rollout tape, then reopens it to attach the
        # loss; gradients must flow through both segments.
        x = Tensor(2.0)
        tape = GradTape()
        with tape:
            y = mul(x, x)
        with tape:
            z = mul(y, Tensor(3.0))
        (g,) = tape.gradients(z, [x])
        assert g == pytest.approx(12.0)

    def test_no_grad_suspends_an_active_tape(self):
        a = Tensor([1.0, 2.0])
        with GradTape() as tape:
            kept = mul(a, a)
            with no_grad():
                dropped = mul(kept, Tensor(10.0))
            resumed = tsum(kept)
        assert len(tape._records) == 2  # mul + tsum; the no_grad op is absent
        assert np.array_equal(dropped.data, 10.0 * a.data**2)  # values still computed
        (g,) = tape.gradients(resumed, [a])
        assert np.array_equal(g, 2.0 * a.data)

    def test_tape_inside_no_grad_records_again(self):
        a = Tensor(3.0)
        with no_grad():
            with GradTape() as inner:
                y = mul(a, a)
            (g,) = inner.gradients(y, [a])
        assert g == pytest.approx(6.0)

    def test_no_grad_values_match_taped_values_bitwise(self):
        rng = np.random.default_rng(9)
        a, b = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=3))
        with GradTape():
            taped = tanh(matmul(a, b))
        with no_grad():
            off_tape = tanh(matmul(a, b))
        assert taped.data.tobytes() == off_tape.data.tobytes()

    def test_gradients_deterministic_bitwise(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=4))

        def run():
            with GradTape() as tape:
                out = tsum(tanh(matmul(a, b)))
            return tape.gradients(out, [a, b])

        g1 = run()
        g2 = run()
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])

    def test_scalar_output_required(self):
        a = Tensor([1.0, 2.0])
        with GradTape() as tape:
            out = mul(a, a)
        with pytest.raises(DimensionError):
            tape.gradients(out, [a])

    def test_fanout_accumulates(self):
        x = Tensor(3.0)
        with GradTape() as tape:
            out = add(mul(x, x), mul(x, Tensor(5.0)))
        (g,) = tape.gradients(out, [x])
        assert g == pytest.approx(2 * 3.0 + 5.0)


class TestLstmCell:
    def test_matches_plain_numpy_reference(self, rng):
        w = init_lstm(4, 3, rng)
        x, h, c = rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
        h2, c2 = lstm_cell(Tensor(x), Tensor(h), Tensor(c), w)
        rh, rc = ref_lstm(x, h, c, w.w_x.data, w.w_h.data, w.b.data)
        assert np.max(np.abs(h2.data - rh)) < 1e-14
        assert np.max(np.abs(c2.data - rc)) < 1e-14

    def test_all_zero_inputs_give_exact_zero(self):
        rng = np.random.default_rng(1)
        w = LstmWeights(xavier(12, 4, rng), xavier(12, 3, rng), Tensor(np.zeros(12)))
        h, c = lstm_cell(Tensor(np.zeros(4)), Tensor(np.zeros(3)), Tensor(np.zeros(3)), w)
        assert np.all(h.data == 0.0) and np.all(c.data == 0.0)

    def test_shape_errors_name_the_mismatch(self, rng):
        w = init_lstm(4, 3, rng)
        good = Tensor(np.zeros(3))
        with pytest.raises(DimensionError):
            lstm_cell(Tensor(np.zeros(5)), good, good, w)
        with pytest.raises(DimensionError):
            lstm_cell(Tensor(np.zeros(4)), Tensor(np.zeros(2)), good, w)

    def test_gradients_check_out(self, rng):
        w = init_lstm(3, 2, rng)
        x = Tensor(rng.normal(size=3))
        params = {"w_x": w.w_x, "w_h": w.w_h, "b": w.b, "x": x}

        def f(p):
            ww = LstmWeights(p["w_x"], p["w_h"], p["b"])
            h, c = lstm_cell(p["x"], Tensor(np.zeros(2)), Tensor(np.zeros(2)), ww)
            return tsum(add(h, c))

        res = grad_check(f, params, h=1e-5, rel_floor=1e-8)
        assert res.max_rel_err < PRIM_TOL, res


class TestAdam:
    def test_two_steps_match_manual_arithmetic(self):
        st_ = AdamState(lr=0.1)
        p = {"w": Tensor(np.array([1.0, -2.0]))}
        g1 = np.array([0.5, -1.0])
        adam_step(st_, p, {"w": g1})
        # t=1: m_hat = g1, v_hat = g1^2 exactly after bias correction
        exp1 = np.array([1.0, -2.0]) - 0.1 * g1 / (np.abs(g1) + 1e-8)
        assert np.array_equal(p["w"].data, exp1)

        g2 = np.array([-0.25, 0.5])
        adam_step(st_, p, {"w": g2})
        m = 0.9 * (0.1 * g1) + 0.1 * g2
        v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2
        exp2 = exp1 - 0.1 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        assert np.array_equal(p["w"].data, exp2)

    def test_exact_zero_gradient_is_identity(self):
        st_ = AdamState(lr=0.5)
        p = {"w": Tensor(np.array([1.0, 2.0]))}
        adam_step(st_, p, {"w": np.array([0.3, -0.3])})
        snap = p["w"].data.copy()
        moments = (dict(st_.m), dict(st_.v), dict(st_.t))
        adam_step(st_, p, {"w": np.zeros(2)})
        assert np.array_equal(p["w"].data, snap)
        assert (st_.m, st_.v, st_.t) == moments

    def test_shape_mismatch_raises(self):
        st_ = AdamState()
        with pytest.raises(DimensionError):
            adam_step(st_, {"w": Tensor(np.zeros(2))}, {"w": np.zeros(3)})

    def test_moments_tracked_per_parameter(self):
        st_ = AdamState(lr=0.1)
        p = {"a": Tensor(np.array([1.0])), "b": Tensor(np.array([1.0]))}
        adam_step(st_, p, {"a": np.array([1.0]), "b": np.zeros(1)})
        assert st_.t == {"a": 1}
        adam_step(st_, p, {"a": np.array([1.0]), "b": np.array([1.0])})
        assert st_.t == {"a": 2, "b": 1}


def _check(f, params):
    res = grad_check(f, params, h=1e-5, rel_floor=1e-8)
    assert res.max_rel_err < PRIM_TOL, res


fin = st.floats(-2.0, 2.0, allow_nan=False)
vec = st.lists(fin, min_size=1, max_size=5).map(np.array)


class TestPrimitiveGradients:
    @settings(max_examples=40, deadline=None)
    @given(vec)
    def test_smooth_unary(self, x):
        for op in (tanh, sigmoid, softplus, exp, neg):
            _check(lambda p, op=op: tsum(op(p["x"])), {"x": Tensor(x)})
        # softsign is only piecewise smooth: central differences straddling
        # its kink at 0 are O(h) wrong, so keep probes off the kink.
        off_kink = np.where(np.abs(x) < 0.05, 0.05, x)
        _check(lambda p: tsum(softsign(p["x"])), {"x": Tensor(off_kink)})

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.1, 4.0), min_size=1, max_size=5).map(np.array))
    def test_log(self, x):
        _check(lambda p: tsum(log(p["x"])), {"x": Tensor(x)})

    @settings(max_examples=40, deadline=None)
    @given(vec, st.sampled_from([add, sub, mul]))
    def test_binary_same_shape(self, x, op):
        # under mul the coordinates of x become gradients of y; near-zero
        # gradients sit below what central differences can certify
        x = np.where(np.abs(x) < 0.05, 0.05, x)
        y = np.roll(x, 1) + 0.25
        _check(lambda p: tsum(op(p["x"], p["y"])), {"x": Tensor(x), "y": Tensor(y)})

    @settings(max_examples=40, deadline=None)
    @given(vec)
    def test_div_away_from_zero(self, x):
        # as with mul: x coordinates become y-gradients (−x/y²), so keep
        # them large enough for central differences to certify
        x = np.where(np.abs(x) < 0.05, 0.05, x)
        y = np.where(np.abs(x) < 0.5, 0.5, x) + 3.0
        _check(lambda p: tsum(div(p["x"], p["y"])), {"x": Tensor(x), "y": Tensor(y)})

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.randoms(use_true_random=False))
    def test_binary_broadcasting(self, k, n, rnd):
        rng = np.random.default_rng(rnd.randint(0, 2**31))
        mat = Tensor(rng.normal(size=(k, n)))
        v = Tensor(rng.normal(size=n))
        s = Tensor(rng.normal())
        _check(lambda p: tsum(add(p["m"], p["v"])), {"m": mat, "v": v})
        _check(lambda p: tsum(mul(p["m"], p["s"])), {"m": mat, "s": s})

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.randoms(use_true_random=False))
    def test_matmul_shapes(self, k, n, j, rnd):
        rng = np.random.default_rng(rnd.randint(0, 2**31))
        a = Tensor(rng.normal(size=(k, n)))
        x = Tensor(rng.normal(size=n))
        b = Tensor(rng.normal(size=(n, j)))
        _check(lambda p: tsum(matmul(p["a"], p["x"])), {"a": a, "x": x})
        _check(lambda p: tsum(matmul(p["a"], p["b"])), {"a": a, "b": b})
        _check(lambda p: tsum(matmul(p["x"], p["b"])), {"x": x, "b": b})
        _check(lambda p: matmul(p["x"], p["x"]), {"x": x})

    def test_reductions_and_structure(self, rng):
        m = Tensor(rng.normal(size=(3, 4)))
        _check(lambda p: tsum(p["m"]), {"m": m})
        _check(lambda p: tsum(tsum(p["m"], axis=0)), {"m": m})
        _check(lambda p: tsum(tsum(p["m"], axis=1)), {"m": m})
        _check(lambda p: tmean(p["m"]), {"m": m})
        _check(lambda p: tsum(narrow(row(p["m"], 1), 1, 2)), {"m": m})
        _check(lambda p: tsum(take_rows(p["m"], [2, 0, 2])), {"m": m})
        a, b = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=2))
        _check(lambda p: tsum(concat([p["a"], p["b"]])), {"a": a, "b": b})
        w2 = Tensor(rng.normal(size=(2, 3)))
        _check(lambda p: tsum(mul(stack_rows([p["a"], p["a"]]), w2)), {"a": a})

    def test_softmax_families(self, rng):
        x = Tensor(rng.uniform(-5, 5, size=5))
        w = Tensor(rng.normal(size=5))
        _check(lambda p: matmul(softmax1d(p["x"]), p["w"]), {"x": x, "w": w})
        m = Tensor(rng.uniform(-5, 5, size=(3, 4)))
        c = Tensor(rng.normal(size=(3, 4)))
        _check(lambda p: tsum(mul(log_softmax_rows(p["m"]), p["c"])), {"m": m, "c": c})

    def test_grad_check_catches_a_planted_error(self):
        from multislu.numerics import _emit

        def bad_double(t):
            # wrong vjp on purpose: claims d(2x)/dx = 3
            return _emit(2.0 * t.data, (t,), lambda g: (3.0 * g,))

        res = grad_check(
            lambda p: tsum(bad_double(p["x"])), {"x": Tensor(np.ones(3))}
        )
        assert res.max_rel_err > 0.3


class TestNumericalBehavior:
    def test_sigmoid_softplus_stable_at_extremes(self):
        big = Tensor(np.array([-745.0, -50.0, 50.0, 745.0]))
        assert np.all(np.isfinite(sigmoid(big).data))
        assert np.all(np.isfinite(softplus(big).data))
        assert sigmoid(big).data[0] == pytest.approx(0.0)
        assert sigmoid(big).data[-1] == pytest.approx(1.0)
        # softplus(x) -> x for large x, -> 0 for very negative x
        assert softplus(big).data[-1] == pytest.approx(745.0)
        assert softplus(big).data[0] == pytest.approx(0.0)

    def test_softsign_bounds_and_fixed_points(self):
        x = np.linspace(-100, 100, 41)
        y = softsign(Tensor(x)).data
        assert np.all(np.abs(y) < 1.0)
        assert softsign(Tensor(0.0)).item() == 0.0
        assert softsign(Tensor(1.0)).item() == pytest.approx(0.5)
        assert softsign(Tensor(-1.0)).item() == pytest.approx(-0.5)

    def test_softmax1d_normalizes(self, rng):
        for _ in range(20):
            p = softmax1d(Tensor(rng.uniform(-50, 50, size=6))).data
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p >= 0.0)

    def test_matmul_dimension_error(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))

    def test_assert_all_finite(self):
        assert_all_finite({"a": Tensor([1.0, 2.0])})
        with pytest.raises(NumericsError, match="bad"):
            assert_all_finite({"bad": Tensor([1.0, math.inf])}, "after step")

    def test_grad_check_flags_nonfinite_probe(self):
        # mul does not guard overflow, so the probe sees inf and must raise.
        with np.errstate(over="ignore"):
            with pytest.raises(NumericsError, match="perturbing"):
                grad_check(lambda p: mul(p["x"], p["x"]), {"x": Tensor(1e200)})

    def test_exp_and_log_guard_their_domains(self):
        with np.errstate(over="ignore"):
            with pytest.raises(NumericsError):
                exp(Tensor(1000.0))
        with pytest.raises(NumericsError):
            log(Tensor(-1.0))
