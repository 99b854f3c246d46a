"""Bilevel objective assembly tests."""

import numpy as np
import pytest

from bowley.choquet import DistortionFunction, DomainError, OutcomeSample, choquet
from bowley.diffnet import Dense, Network, ReLU
from bowley.game import (
    FarmerPreference,
    GameConfig,
    ScenarioSet,
    combined_objective,
    lower_objective,
    upper_objective,
)
from bowley.payoff import Normalization, PayoffArch, PayoffModel
from bowley.premium import CostModel, PremiumPrinciple


def identity_model():
    net = Network([Dense(1, 1, weight=[[1.0]], bias=[0.0]), ReLU()], (1,))
    return PayoffModel("scalar", net, Normalization.identity(1))


def stoploss_model(d):
    # ReLU((y - d)) on raw loss input
    net = Network([Dense(1, 1, weight=[[1.0]], bias=[-d]), ReLU()], (1,))
    return PayoffModel("scalar", net, Normalization.identity(1))


def zero_model():
    net = Network([Dense(1, 1, weight=[[0.0]], bias=[0.0]), ReLU()], (1,))
    return PayoffModel("scalar", net, Normalization.identity(1))


def base_cfg(**kw):
    defaults = dict(problem="P1", mode="indemnity", cost=CostModel(0.0),
                    farmer=FarmerPreference("cvar", 0.5))
    defaults.update(kw)
    return GameConfig(**defaults)


def test_scenario_set_validation():
    with pytest.raises(DomainError):
        ScenarioSet(losses=[-1.0, 2.0], probs=[0.5, 0.5])
    with pytest.raises(DomainError):
        ScenarioSet(losses=[1.0, 2.0], probs=[0.6, 0.6])
    with pytest.raises(DomainError):
        ScenarioSet(losses=[1.0], probs=[1.0], weather=np.zeros((2, 3, 12)))


def test_farmer_distortion_is_normalized():
    for pref in (FarmerPreference("cvar", 0.8),
                  FarmerPreference("convex_combo", 0.9, 0.35)):
        assert pref.distortion().g1 == pytest.approx(1.0)
    with pytest.raises(DomainError):
        FarmerPreference("power", 0.5)


def test_uninsured_lower_objective():
    s = ScenarioSet(losses=[10, 0], probs=[0.5, 0.5])
    cfg = base_cfg()
    got = lower_objective(cfg, PremiumPrinciple.expected(0.2), zero_model(), s)
    assert got == pytest.approx(choquet(cfg.farmer.distortion(), s.loss_sample()))


def test_full_insurance_constant_wealth():
    s = ScenarioSet(losses=[3.0, 1.0, 2.0], probs=[0.3, 0.4, 0.3])
    cfg = base_cfg()
    theta = 0.25
    got = lower_objective(cfg, PremiumPrinciple.expected(theta), identity_model(), s)
    assert got == pytest.approx((1 + theta) * s.losses @ s.probs, abs=1e-12)


def test_stoploss_hand_example():
    # Y=([10,0],[.5,.5]), CVaR(0.5), Expected(0.2), I=(y-4)+:
    # premium = 1.2*3 = 3.6, Z* = [7.6, 3.6], CVaR_0.5 -> 7.6
    s = ScenarioSet(losses=[10.0, 0.0], probs=[0.5, 0.5])
    cfg = base_cfg()
    p = PremiumPrinciple.expected(0.2)
    model = stoploss_model(4.0)
    assert lower_objective(cfg, p, model, s) == pytest.approx(7.6, abs=1e-12)
    assert upper_objective(cfg, p, model, s) == pytest.approx(0.6, abs=1e-12)


def test_upper_objective_zero_cases():
    s = ScenarioSet(losses=[10.0, 0.0], probs=[0.5, 0.5])
    cfg = base_cfg(cost=CostModel(0.3))
    # theta == mu: profit is zero for any payoff under expected pricing
    p = PremiumPrinciple.expected(0.3)
    for model in (identity_model(), stoploss_model(2.0)):
        assert upper_objective(cfg, p, model, s) == pytest.approx(0.0, abs=1e-12)
    assert upper_objective(cfg, p, zero_model(), s) == 0.0


def test_translation_identity_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        losses = rng.uniform(0, 8, n)
        probs = rng.uniform(0.1, 1, n)
        probs /= probs.sum()
        s = ScenarioSet(losses=losses, probs=probs)
        cfg = base_cfg(farmer=FarmerPreference("convex_combo", rng.uniform(0.3, 0.9),
                                               rng.uniform(0, 1)))
        d = rng.uniform(0, 6)
        model = stoploss_model(d)
        p = PremiumPrinciple.expected(rng.uniform(0, 1))
        lhs = lower_objective(cfg, p, model, s)
        payoffs = OutcomeSample(np.maximum(losses - d, 0), probs)
        from bowley.premium import premium
        pi = premium(p, payoffs)
        retained = OutcomeSample(losses - payoffs.values, probs)
        rhs = choquet(cfg.farmer.distortion(), retained) + pi
        zstar = OutcomeSample(losses - payoffs.values + pi, probs)
        direct = choquet(cfg.farmer.distortion(), zstar)
        assert lhs == pytest.approx(rhs, abs=1e-12)
        assert lhs == pytest.approx(direct, abs=1e-9)


def test_scale_invariance_of_objectives():
    rng = np.random.default_rng(2)
    s = ScenarioSet(losses=[8.0, 2.0, 0.0], probs=[0.25, 0.5, 0.25])
    cfg = base_cfg(cost=CostModel(0.02), farmer=FarmerPreference("cvar", 0.6))
    p = PremiumPrinciple.expected(0.4)
    c = 3.7
    scaled = ScenarioSet(losses=c * s.losses, probs=s.probs)
    for d in (0.0, 1.0, 5.0):
        lo = lower_objective(cfg, p, stoploss_model(d), s)
        up = upper_objective(cfg, p, stoploss_model(d), s)
        lo_c = lower_objective(cfg, p, stoploss_model(c * d), scaled)
        up_c = upper_objective(cfg, p, stoploss_model(c * d), scaled)
        assert lo_c == pytest.approx(c * lo, abs=1e-9)
        assert up_c == pytest.approx(c * up, abs=1e-9)


def test_combined_objective_composition():
    s = ScenarioSet(losses=[10.0, 0.0], probs=[0.5, 0.5])
    cfg = base_cfg()
    p = PremiumPrinciple.expected(0.2)
    model, ref = stoploss_model(4.0), identity_model()
    gamma = 7.0
    got = combined_objective(cfg, p, model, ref, s, gamma)
    lp_m = lower_objective(cfg, p, model, s)
    lp_r = lower_objective(cfg, p, ref, s)
    up = upper_objective(cfg, p, model, s)
    assert got == pytest.approx(-up + gamma * (lp_m - lp_r), abs=1e-12)
    # model == ref: exactly -upper
    same = combined_objective(cfg, p, model, model, s, gamma)
    assert same == pytest.approx(-up, abs=0)
    # ref strictly better in LP -> positive penalty contribution
    assert lp_m - lp_r > 0 or lp_m - lp_r <= 0  # sign fixed by the instance below
    better = combined_objective(cfg, PremiumPrinciple.expected(0.0),
                                zero_model(), identity_model(), s, gamma)
    lp_zero = lower_objective(cfg, PremiumPrinciple.expected(0.0), zero_model(), s)
    lp_full = lower_objective(cfg, PremiumPrinciple.expected(0.0), identity_model(), s)
    assert lp_zero > lp_full  # free full insurance beats none
    assert better == pytest.approx(gamma * (lp_zero - lp_full), abs=1e-12)


def test_combined_objective_gamma_domain():
    s = ScenarioSet(losses=[1.0, 0.0], probs=[0.5, 0.5])
    cfg = base_cfg()
    with pytest.raises(DomainError):
        combined_objective(cfg, PremiumPrinciple.expected(0.1),
                           identity_model(), identity_model(), s, 0.0)


def test_index_measurability_dominance_via_enumeration():
    # two scenarios share a weather grid but have different losses, so any
    # index payoff is constant across them: basis risk makes the best index
    # LP weakly worse than the best indemnity LP
    from bowley.oracle import enumerate_follower, weather_groups
    w = np.zeros((4, 2, 12))
    w[0] += 1.0
    w[1] += 1.0  # duplicate grid, different loss
    w[2] += 2.0
    w[3] += 3.0
    s = ScenarioSet(losses=[8.0, 2.0, 4.0, 0.0], probs=[0.25] * 4, weather=w)
    farmer = FarmerPreference("cvar", 0.7)
    p = PremiumPrinciple.expected(0.3)
    levels = np.linspace(0, 8, 9)
    groups = weather_groups(s)
    assert groups.tolist() == [0, 0, 1, 2]
    _, info_idx = enumerate_follower(p, farmer, s, [levels] * 3, groups=groups)
    _, info_ind = enumerate_follower(p, farmer, s, [levels] * 4)
    assert info_idx["lp"] >= info_ind["lp"] - 1e-12
    assert info_idx["lp"] > info_ind["lp"]  # strict here: grids collide


def test_game_config_validation():
    with pytest.raises(DomainError):
        GameConfig(problem="P4")
    with pytest.raises(DomainError):
        GameConfig(mode="parametric")
    with pytest.raises(DomainError):
        GameConfig(theta0=-0.5)
    with pytest.raises(DomainError):
        GameConfig(rho0=0.5)
    cfg = GameConfig(problem="P3", theta0=0.3)
    assert cfg.initial_curve_scale() == pytest.approx(1.3)
