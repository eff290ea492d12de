"""Reward scorer over masked slot matrices, and Boltzmann weighting."""

import math

import numpy as np
import pytest

from multislu.numerics import DimensionError, GradTape, LstmWeights, Tensor
from multislu.reward import boltzmann, init_reward_params, reward

M, K = 3, 2


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def ref_lstm(x, h, c, wx, wh, b):
    hsz = wh.shape[1]
    z = wx @ x + wh @ h + b
    c2 = _sig(z[hsz : 2 * hsz]) * c + _sig(z[:hsz]) * np.tanh(z[2 * hsz : 3 * hsz])
    return _sig(z[3 * hsz :]) * np.tanh(c2), c2


def hand_reward(masked, cf, p):
    """The same architecture written out in plain numpy."""
    h = np.zeros(p.row_lstm.hidden_size)
    c = np.zeros(p.row_lstm.hidden_size)
    steps = []
    for i in range(masked.shape[0]):
        h, c = ref_lstm(masked[i], h, c, p.row_lstm.w_x.data, p.row_lstm.w_h.data, p.row_lstm.b.data)
        steps.append(float(p.step_w.data @ h + p.step_b.data))
    vec = np.array(steps) + masked @ cf
    lin = float(p.out_w.data @ vec + p.out_b.data)
    return lin / (1.0 + abs(lin))


@pytest.fixture
def params():
    return init_reward_params(M, K, hidden=3, rng=np.random.default_rng(9))


class TestReward:
    def test_matches_hand_trace(self, params):
        masked = np.array([[0.3, -0.7, 0.1], [0.0, 0.0, 0.0]])
        cf = np.array([0.2, 0.5, -0.4])
        assert reward(masked, cf, params).item() == pytest.approx(
            hand_reward(masked, cf, params), abs=1e-14
        )

    def test_output_strictly_inside_unit_interval(self, params, rng):
        for _ in range(50):
            masked = rng.normal(scale=3.0, size=(K, M))
            masked[rng.random(K) < 0.4] = 0.0
            cf = rng.normal(size=M)
            r = reward(masked, cf, params).item()
            assert -1.0 < r < 1.0

    def test_all_zero_parameters_score_exactly_zero(self):
        p = init_reward_params(M, K, hidden=3, rng=np.random.default_rng(0))
        zero = lambda t: Tensor(np.zeros_like(t.data))
        p.row_lstm = LstmWeights(zero(p.row_lstm.w_x), zero(p.row_lstm.w_h), zero(p.row_lstm.b))
        p.step_w, p.step_b = zero(p.step_w), zero(p.step_b)
        p.out_w, p.out_b = zero(p.out_w), zero(p.out_b)
        r = reward(np.ones((K, M)), np.ones(M), p)
        assert r.item() == 0.0

    def test_deterministic_bitwise(self, params, rng):
        masked = rng.normal(size=(K, M))
        cf = rng.normal(size=M)
        assert reward(masked, cf, params).item() == reward(masked, cf, params).item()

    def test_mask_dependence(self, params, rng):
        full = rng.normal(size=(K, M))
        dropped = full.copy()
        dropped[1] = 0.0
        cf = rng.normal(size=M)
        assert reward(full, cf, params).item() != reward(dropped, cf, params).item()

    def test_shape_validation(self, params):
        with pytest.raises(DimensionError):
            reward(np.zeros((K + 1, M)), np.zeros(M), params)
        with pytest.raises(DimensionError):
            reward(np.zeros((K, M)), np.zeros(M + 1), params)
        with pytest.raises(DimensionError):
            reward(np.zeros(K), np.zeros(M), params)

    def test_inputs_are_constants_on_the_tape(self, params, rng):
        # Gradients flow to parameters only; the masked matrix and feedback
        # vector are data, not differentiable inputs.
        masked = rng.normal(size=(K, M))
        cf = rng.normal(size=M)
        named = params.named()
        with GradTape() as tape:
            out = reward(masked, cf, params)
        grads = tape.gradients(out, list(named.values()))
        assert any(np.any(g != 0.0) for g in grads)

    def test_named_round_trip(self, params, rng):
        masked = rng.normal(size=(K, M))
        cf = rng.normal(size=M)
        clone = init_reward_params(M, K, hidden=3, rng=np.random.default_rng(321))
        clone.load_named("reward", {k: Tensor(v.data) for k, v in params.named().items()})
        assert reward(masked, cf, clone).item() == reward(masked, cf, params).item()


class TestBoltzmann:
    def test_singleton_is_certain(self):
        assert np.array_equal(boltzmann([3.7]), [1.0])

    def test_equal_rewards_uniform(self):
        p = boltzmann([0.4, 0.4, 0.4, 0.4])
        assert np.max(np.abs(p - 0.25)) < 1e-15

    def test_log_two_gap_gives_two_thirds(self):
        p = boltzmann([math.log(2.0), 0.0])
        assert p[0] == pytest.approx(2.0 / 3.0, abs=1e-15)
        assert p[1] == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_order_preserving(self, rng):
        r = rng.normal(scale=10, size=8)
        p = boltzmann(r)
        assert np.array_equal(np.argsort(r), np.argsort(p))

    def test_extreme_magnitudes_stay_finite(self):
        p = boltzmann([1000.0, -1000.0, 999.0])
        assert np.all(np.isfinite(p))
        assert abs(p.sum() - 1.0) < 1e-12

    def test_shape_validation(self):
        with pytest.raises(DimensionError):
            boltzmann([])
        with pytest.raises(DimensionError):
            boltzmann(np.zeros((2, 2)))
