"""Brute-force oracle tests: follower enumeration and leader grid searches."""

import numpy as np
import pytest

from bowley.choquet import OutcomeSample, choquet
from bowley.game import FarmerPreference, ScenarioSet
from bowley.oracle import (
    InstanceTooLarge,
    distortion_grid_oracle,
    enumerate_follower,
    knot_curve_family,
    stoploss_oracle,
)
from bowley.premium import CostModel, PremiumPrinciple, insurer_profit, premium


def two_state():
    return ScenarioSet(losses=[10.0, 0.0], probs=[0.5, 0.5])


def canonical():
    return ScenarioSet(losses=[0.0, 2.0, 4.0, 10.0], probs=[0.25] * 4)


CVAR08 = FarmerPreference("cvar", 0.8)
COST = CostModel(0.02)


# -- enumerate_follower -------------------------------------------------------

def test_huge_loading_means_no_insurance():
    s = two_state()
    vec, info = enumerate_follower(PremiumPrinciple.expected(10.0),
                                   FarmerPreference("cvar", 0.5), s,
                                   np.linspace(0, 10, 11))
    np.testing.assert_array_equal(vec, [0.0, 0.0])


def test_free_fair_insurance_is_full():
    s = two_state()
    vec, info = enumerate_follower(PremiumPrinciple.expected(0.0),
                                   FarmerPreference("cvar", 0.5), s,
                                   [np.linspace(0, 10, 11), np.array([0.0])])
    np.testing.assert_array_equal(vec, [10.0, 0.0])


def test_enumeration_matches_hand_minimization():
    # grid {0,2,...,10} x {0}: LP(I1) = CVaR_0.5 of [10-I1+Pi, Pi]
    s = two_state()
    farmer = FarmerPreference("cvar", 0.5)
    p = PremiumPrinciple.expected(0.2)
    levels = [np.arange(0, 10.5, 2.0), np.array([0.0])]
    vec, info = enumerate_follower(p, farmer, s, levels)
    best_lp, best_v = np.inf, None
    for i1 in levels[0]:
        pi = 1.2 * 0.5 * i1
        z = np.array([10.0 - i1 + pi, pi])
        lp = choquet(farmer.distortion(), OutcomeSample(z, s.probs))
        if lp < best_lp - 1e-15:
            best_lp, best_v = lp, i1
    assert vec[0] == best_v
    assert info["lp"] == pytest.approx(best_lp, abs=1e-12)


def test_enumeration_size_refusals():
    s = ScenarioSet(losses=np.arange(7.0), probs=np.full(7, 1 / 7))
    with pytest.raises(InstanceTooLarge):
        enumerate_follower(PremiumPrinciple.expected(0.1), CVAR08, s, np.arange(3.0))
    s2 = ScenarioSet(losses=np.arange(4.0), probs=np.full(4, 0.25))
    with pytest.raises(InstanceTooLarge):
        enumerate_follower(PremiumPrinciple.expected(0.1), CVAR08, s2, np.arange(22.0))
    s3 = ScenarioSet(losses=np.arange(6.0), probs=np.full(6, 1 / 6))
    with pytest.raises(InstanceTooLarge):
        enumerate_follower(PremiumPrinciple.expected(0.1), CVAR08, s3,
                           np.linspace(0, 5, 14))  # 14^6 > 5e6


def test_tie_break_prефers_less_insurance():
    # theta=0 and mu=0: farmer indifferent between full coverage and any
    # uniform shift; least expected payoff must win among exact ties
    s = ScenarioSet(losses=[4.0, 4.0], probs=[0.5, 0.5])
    vec, info = enumerate_follower(PremiumPrinciple.expected(0.0), CVAR08, s,
                                   np.linspace(0, 4, 5))
    np.testing.assert_array_equal(vec, [0.0, 0.0])


# -- stop-loss oracle ---------------------------------------------------------

def test_degenerate_constant_loss_no_insurance():
    s = ScenarioSet(losses=[3.0, 3.0, 3.0], probs=[1 / 3] * 3)
    res = stoploss_oracle(s, CVAR08, COST, np.arange(0, 2.01, 0.1),
                          np.linspace(0, 3, 13))
    assert res.profit == 0.0
    np.testing.assert_array_equal(res.payoffs, np.zeros(3))


def test_grid_refinement_weakly_improves():
    s = canonical()
    coarse = np.arange(0, 4.01, 0.2)
    fine = np.arange(0, 4.001, 0.1)
    d = np.linspace(0, 10, 41)
    p_coarse = stoploss_oracle(s, CVAR08, COST, coarse, d).profit
    p_fine = stoploss_oracle(s, CVAR08, COST, fine, d).profit
    assert p_fine >= p_coarse - 1e-12


def test_oracle_result_recomputable():
    s = canonical()
    res = stoploss_oracle(s, CVAR08, COST, np.arange(0, 4.01, 0.05),
                          np.linspace(0, 10, 41))
    sample = OutcomeSample(res.payoffs, s.probs)
    p = PremiumPrinciple.expected(res.leader["theta"])
    assert insurer_profit(p, COST, sample) == pytest.approx(res.profit, abs=1e-12)
    assert premium(p, sample) == pytest.approx(res.premium, abs=1e-12)
    retained = OutcomeSample(s.losses - res.payoffs, s.probs)
    lp = choquet(CVAR08.distortion(), retained) + res.premium
    assert lp == pytest.approx(res.farmer_risk, abs=1e-12)


def test_stoploss_profit_not_above_full_enumeration():
    # the stop-loss family is a subset of the payoff grid; under CVaR the
    # leader-grid profit with full enumeration matches it
    s = ScenarioSet(losses=[0.0, 3.0, 9.0], probs=[1 / 3] * 3)
    thetas = np.arange(0, 3.01, 0.25)
    d_grid = np.linspace(0, 9, 37)
    res = stoploss_oracle(s, CVAR08, COST, thetas, d_grid)
    best = -np.inf
    for th in thetas:
        p = PremiumPrinciple.expected(th)
        vec, _ = enumerate_follower(p, CVAR08, s, np.linspace(0, 9, 19))
        best = max(best, insurer_profit(p, COST, OutcomeSample(vec, s.probs)))
    assert res.profit <= best + 1e-9


def test_p2_grid_contains_p1():
    s = canonical()
    thetas = np.arange(0, 4.01, 0.05)
    d = np.linspace(0, 10, 41)
    p1 = stoploss_oracle(s, CVAR08, COST, thetas, d).profit
    p2 = stoploss_oracle(s, CVAR08, COST, thetas, d, rho_grid=np.arange(1, 6.01, 0.25)).profit
    assert p2 >= p1 - 1e-9


def test_p3_family_contains_p1_and_p2():
    s = canonical()
    thetas = np.arange(0, 4.01, 0.1)
    rhos = np.arange(1, 6.01, 0.5)
    d = np.linspace(0, 10, 41)
    p1 = stoploss_oracle(s, CVAR08, COST, thetas, d).profit
    p2 = stoploss_oracle(s, CVAR08, COST, thetas, d, rho_grid=rhos).profit
    curves = knot_curve_family(thetas, CVAR08, 100, rho_grid=rhos)
    p3 = distortion_grid_oracle(s, CVAR08, COST, curves, d).profit
    assert p1 <= p2 + 1e-9 <= p3 + 2e-9


def test_theta_star_nonincreasing_in_lambda():
    # more weight on the mean (higher lambda) means less surplus to extract
    s = ScenarioSet(losses=[0.0, 1.0, 3.0, 12.0], probs=[0.4, 0.3, 0.2, 0.1])
    thetas = np.arange(0, 4.001, 0.02)
    d = np.linspace(0, 12, 49)
    stars = []
    for lam in (0.1, 0.3, 0.5, 0.7, 0.9):
        farmer = FarmerPreference("convex_combo", 0.8, lam)
        res = stoploss_oracle(s, farmer, COST, thetas, d)
        stars.append(res.leader["theta"])
    assert all(a >= b - 1e-12 for a, b in zip(stars, stars[1:]))
    assert stars[0] > stars[-1]


def test_empty_grid_rejected():
    s = canonical()
    with pytest.raises(ValueError):
        stoploss_oracle(s, CVAR08, COST, [], np.linspace(0, 10, 5))
    with pytest.raises(ValueError):
        stoploss_oracle(s, CVAR08, COST, [0.1], [])
