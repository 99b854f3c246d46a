"""Payoff model and pricing curve tests."""

import numpy as np
import pytest

from bowley.choquet import DistortionFunction, evaluate_distortion
from bowley.diffnet import Dense, Network, ReLU, ShapeError
from bowley.game import ScenarioSet
from bowley.payoff import (
    MonotonePricingCurve,
    Normalization,
    PayoffArch,
    PayoffModel,
    payoff_batch,
    pricing_curve,
    softplus,
    softplus_inverse,
)


def grid_scenarios(rng, n=10, rows=6):
    weather = rng.standard_normal((n, rows, 12))
    losses = rng.uniform(0, 5, n)
    return ScenarioSet(losses=losses, probs=np.full(n, 1 / n), weather=weather)


def scalar_scenarios(rng, n=8):
    losses = rng.uniform(0, 5, n)
    return ScenarioSet(losses=losses, probs=np.full(n, 1 / n))


# -- payoff models ---------------------------------------------------------

def test_zero_final_weights_give_zero_payoff():
    rng = np.random.default_rng(0)
    model = PayoffModel.scalar_loss(PayoffArch(hidden=(4,)), rng)
    final = model.net.layers[-2]
    final.weight[...] = 0.0
    final.bias[...] = 0.0
    s = scalar_scenarios(rng)
    np.testing.assert_array_equal(model.evaluate(s), np.zeros(len(s)))


def test_identity_like_scalar_net():
    net = Network([Dense(1, 1, weight=[[1.0]], bias=[0.0]), ReLU()], (1,))
    model = PayoffModel("scalar", net, Normalization.identity(1))
    s = scalar_scenarios(np.random.default_rng(1))
    np.testing.assert_allclose(model.evaluate(s), s.losses)


def test_cnn_batch_equals_per_scenario_forward():
    rng = np.random.default_rng(2)
    model = PayoffModel.index_grid(6, PayoffArch(kind="cnn", conv_channels=(4, 4), dense=(8,)), rng)
    s = grid_scenarios(rng, n=7)
    model.fit_normalization(s)
    batch = model.evaluate(s)
    for i in range(len(s)):
        one = ScenarioSet(losses=s.losses[i:i + 1], probs=[1.0],
                          weather=s.weather[i:i + 1])
        # BLAS kernels are shape-dependent; agreement is to the last bit or 1 ulp
        np.testing.assert_allclose(model.evaluate(one)[0], batch[i],
                                   rtol=1e-14, atol=1e-14)


def test_payoff_batch_attaches_probs():
    rng = np.random.default_rng(3)
    model = PayoffModel.scalar_loss(PayoffArch(), rng)
    s = scalar_scenarios(rng)
    out = payoff_batch(model, s)
    np.testing.assert_array_equal(out.probs, s.probs)
    assert np.all(out.values >= 0)


def test_nonnegativity_many_random_models():
    rng = np.random.default_rng(4)
    for trial in range(20):
        arch = PayoffArch(hidden=(int(rng.integers(2, 10)),))
        model = PayoffModel.index_grid(4, arch, rng)
        s = grid_scenarios(rng, n=50, rows=4)
        model.fit_normalization(s)
        assert np.all(model.evaluate(s) >= 0.0)


def test_index_model_requires_weather():
    rng = np.random.default_rng(5)
    model = PayoffModel.index_grid(6, PayoffArch(), rng)
    with pytest.raises(Exception):
        model.evaluate(scalar_scenarios(rng))


def test_shape_mismatch_rejected():
    rng = np.random.default_rng(6)
    model = PayoffModel.index_grid(6, PayoffArch(), rng)
    s = grid_scenarios(rng, rows=5)
    with pytest.raises(ShapeError):
        model.evaluate(s)


def test_backward_accumulates_gradients():
    model = PayoffModel(
        "scalar",
        Network([Dense(1, 1, weight=[[1.0]], bias=[0.0]), ReLU()], (1,)),
        Normalization.identity(1))
    s = scalar_scenarios(np.random.default_rng(7))
    model.evaluate(s)
    model.net.zero_grad()
    model.backward(np.ones(len(s)))
    total = sum(float(np.abs(g).sum()) for _, _, g in model.net.parameters())
    assert total > 0


def test_model_state_roundtrip():
    rng = np.random.default_rng(8)
    model = PayoffModel.index_grid(6, PayoffArch(kind="cnn", conv_channels=(3,), dense=(5,)), rng)
    s = grid_scenarios(rng)
    model.fit_normalization(s)
    clone = PayoffModel.from_state(model.to_state())
    np.testing.assert_array_equal(model.evaluate(s), clone.evaluate(s))


# -- normalization ----------------------------------------------------------

def test_normalization_idempotent():
    rng = np.random.default_rng(9)
    w = rng.standard_normal((40, 6, 12)) * 3 + 1
    obs = w.transpose(0, 2, 1).reshape(-1, 6)
    norm = Normalization.fit(obs)
    z = norm.apply_grid(w)
    obs2 = z.transpose(0, 2, 1).reshape(-1, 6)
    norm2 = Normalization.fit(obs2)
    z2 = norm2.apply_grid(z)
    assert np.max(np.abs(z2 - z)) <= 1e-9


def test_zero_variance_channel_passes_through():
    obs = np.column_stack([np.full(30, 2.5), np.linspace(0, 1, 30)])
    norm = Normalization.fit(obs)
    assert norm.std[0] == 1.0
    assert norm.mean[0] == 2.5


# -- pricing curve ----------------------------------------------------------

def test_identity_curve_is_identity_distortion():
    curve = MonotonePricingCurve.identity(40)
    g = pricing_curve(curve)
    s = np.linspace(0, 1, 101)
    np.testing.assert_allclose(np.asarray(evaluate_distortion(g, s)), s, atol=1e-12)


def test_single_knot_concentration():
    m = 20
    raw = np.full(m, -40.0)
    raw[0] = softplus_inverse(1.0)
    g = pricing_curve(MonotonePricingCurve(raw))
    s = np.linspace(0, 1, 201)
    expected = np.minimum(s * m, 1.0)
    np.testing.assert_allclose(np.asarray(evaluate_distortion(g, s)), expected, atol=1e-12)


def test_any_raw_vector_is_feasible():
    rng = np.random.default_rng(10)
    for _ in range(20):
        raw = rng.standard_normal(int(rng.integers(2, 60))) * 5
        g = pricing_curve(MonotonePricingCurve(raw))
        grid = np.linspace(0, 1, 1001)
        vals = np.asarray(evaluate_distortion(g, grid))
        assert vals[0] == 0.0
        assert np.all(np.diff(vals) >= -1e-15)


def test_increment_jacobian_is_softplus_slope():
    rng = np.random.default_rng(11)
    raw = rng.standard_normal(15)
    curve = MonotonePricingCurve(raw)
    h = 1e-7
    for j in range(15):
        bumped = raw.copy()
        bumped[j] += h
        fd = (softplus(bumped[j]) - softplus(raw[j])) / h
        assert curve.increment_jacobian()[j] == pytest.approx(fd, rel=1e-5)


def test_softplus_inverse_roundtrip():
    y = np.array([1e-4, 0.01, 1.0, 5.0, 40.0])
    np.testing.assert_allclose(softplus(softplus_inverse(y)), y, rtol=1e-12)
