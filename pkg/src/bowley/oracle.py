"""Independent brute-force solvers on tiny instances.

These provide reference equilibria for validating the gradient solver:

  enumerate_follower     exhaustive lower-level minimization over a grid of
                         per-scenario payoff levels (optionally constrained
                         to be measurable w.r.t. the weather index)
  stoploss_oracle        leader grid search with the follower restricted to
                         stop-loss contracts (Y - d)+, the optimal family
                         under CVaR-type preferences
  distortion_grid_oracle the same follower logic under a finite family of
                         candidate pricing curves (the general-premium grid)

All grids are evaluated in a fixed order and ties are broken first by
smaller farmer objective, then by smaller expected payoff (indifference is
resolved toward less insurance), then by grid position, so results are
deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .choquet import (
    DistortionFunction,
    OutcomeSample,
    choquet,
    discretize_distortion,
    evaluate_distortion,
)
from .game import FarmerPreference, ScenarioSet
from .premium import CostModel, PremiumPrinciple, insurer_profit, premium

__all__ = [
    "InstanceTooLarge",
    "OracleResult",
    "enumerate_follower",
    "stoploss_oracle",
    "distortion_grid_oracle",
    "knot_curve_family",
    "weather_groups",
]

MAX_SCENARIOS = 6
MAX_LEVELS = 21
MAX_COMBOS = 5_000_000
_CHUNK = 1 << 18


class InstanceTooLarge(ValueError):
    """The requested enumeration exceeds the hard-coded size bounds."""


@dataclass(frozen=True)
class OracleResult:
    """Best grid point found by an oracle, with recomputable quantities."""

    leader: dict
    deductible: float | None
    payoffs: np.ndarray
    profit: float
    farmer_risk: float
    premium: float
    expected_payoff: float
    evaluations: int

    def to_dict(self) -> dict:
        return {
            "leader": self.leader,
            "deductible": self.deductible,
            "payoffs": self.payoffs.tolist(),
            "profit": self.profit,
            "farmer_risk": self.farmer_risk,
            "premium": self.premium,
            "expected_payoff": self.expected_payoff,
            "evaluations": self.evaluations,
        }


def _choquet_rows(g: DistortionFunction, values: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Row-wise Choquet integral: values (m, q), probs (q,) -> (m,)."""
    order = np.argsort(-values, axis=1, kind="stable")
    z = np.take_along_axis(values, order, axis=1)
    s = np.minimum(np.cumsum(probs[order], axis=1), 1.0)
    gs = np.asarray(evaluate_distortion(g, s))
    w = np.maximum(np.diff(np.concatenate([np.zeros((len(values), 1)), gs], axis=1), axis=1), 0.0)
    return np.einsum("ij,ij->i", w, z)


def _premium_rows(principle: PremiumPrinciple, payoffs: np.ndarray,
                  probs: np.ndarray) -> np.ndarray:
    if principle.variant == "expected":
        return (1.0 + principle.theta) * (payoffs @ probs)
    if principle.variant == "power":
        g = DistortionFunction.power(principle.rho, 1.0)
        return (1.0 + principle.theta) * _choquet_rows(g, payoffs, probs)
    return _choquet_rows(principle.distortion, payoffs, probs)


def weather_groups(scenarios: ScenarioSet) -> np.ndarray:
    """Group label per scenario; scenarios with identical grids share one.

    An index payoff function must assign equal payoffs within a group (it
    only sees the weather), which is what creates basis risk on instances
    where equal grids carry different losses.
    """
    if scenarios.weather is None:
        return np.arange(len(scenarios))
    labels = np.empty(len(scenarios), dtype=int)
    seen = {}
    for i in range(len(scenarios)):
        key = scenarios.weather[i].tobytes()
        labels[i] = seen.setdefault(key, len(seen))
    return labels


def enumerate_follower(principle: PremiumPrinciple, farmer: FarmerPreference,
                       scenarios: ScenarioSet, levels, groups=None):
    """Exhaustively minimize the farmer objective over a payoff-level grid.

    levels is one shared 1-d array of candidate payoff values, or a list of
    arrays (one per group).  groups maps scenarios to payoff groups
    (identical-weather scenarios for index contracts); default is one group
    per scenario.  Returns (payoff_vector, info dict).
    """
    q = len(scenarios)
    if groups is None:
        groups = np.arange(q)
    groups = np.asarray(groups, dtype=int)
    n_groups = int(groups.max()) + 1
    if q > MAX_SCENARIOS:
        raise InstanceTooLarge(f"enumeration limited to {MAX_SCENARIOS} scenarios, got {q}")
    if isinstance(levels, (list, tuple)):
        level_arrays = [np.asarray(l, dtype=float) for l in levels]
    else:
        level_arrays = [np.asarray(levels, dtype=float)] * n_groups
    if len(level_arrays) != n_groups:
        raise ValueError(f"need {n_groups} level arrays, got {len(level_arrays)}")
    for arr in level_arrays:
        if arr.size > MAX_LEVELS:
            raise InstanceTooLarge(f"enumeration limited to {MAX_LEVELS} levels, got {arr.size}")
        if np.any(arr < 0):
            raise ValueError("payoff levels must be >= 0")
    sizes = np.array([arr.size for arr in level_arrays], dtype=np.int64)
    total = int(np.prod(sizes))
    if total > MAX_COMBOS:
        raise InstanceTooLarge(f"grid has {total} combinations, limit is {MAX_COMBOS}")

    gf = farmer.distortion()
    y = scenarios.losses
    p = scenarios.probs
    # mixed-radix decoding: combo index -> level choice per group
    strides = np.concatenate((np.cumprod(sizes[::-1])[::-1][1:], [1]))
    best = None  # (lp, expected, combo_index, payoff_vector)
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        group_payoffs = np.empty((idx.size, n_groups))
        for j in range(n_groups):
            group_payoffs[:, j] = level_arrays[j][(idx // strides[j]) % sizes[j]]
        payoffs = group_payoffs[:, groups]
        lp = _choquet_rows(gf, y[None, :] - payoffs, p) + _premium_rows(principle, payoffs, p)
        expected = payoffs @ p
        k = np.lexsort((idx, expected, lp))[0]
        cand = (lp[k], expected[k], idx[k], payoffs[k].copy())
        if best is None or cand[:3] < best[:3]:
            best = cand
    return best[3], {"lp": float(best[0]), "expected_payoff": float(best[1]),
                     "evaluations": total}


def _stoploss_tables(scenarios: ScenarioSet, farmer: FarmerPreference, d_grid):
    d = np.asarray(d_grid, dtype=float)
    if d.size == 0:
        raise ValueError("deductible grid must be nonempty")
    y = scenarios.losses
    p = scenarios.probs
    payoffs = np.maximum(y[None, :] - d[:, None], 0.0)
    gf = farmer.distortion()
    retained_risk = _choquet_rows(gf, np.minimum(y[None, :], d[:, None]), p)
    uninsured = choquet(gf, scenarios.loss_sample())
    return d, payoffs, payoffs @ p, retained_risk, uninsured


def _best_response(d, payoffs, expected, retained_risk, premiums, uninsured):
    """Farmer-best deductible under given per-deductible premiums.

    Appends the uninsured option so indifference resolves toward no
    insurance (smallest expected payoff, then largest deductible).
    """
    lp = retained_risk + premiums
    lp_all = np.concatenate((lp, [uninsured]))
    e_all = np.concatenate((expected, [0.0]))
    d_all = np.concatenate((d, [np.inf]))
    k = int(np.lexsort((-d_all, e_all, lp_all))[0])
    return k, lp_all[k]


def _leader_search(scenarios, farmer, cost, d_grid, principle_grid):
    """Shared stop-loss leader search over an ordered list of principles."""
    d, payoffs, expected, retained_risk, uninsured = _stoploss_tables(
        scenarios, farmer, d_grid)
    p = scenarios.probs
    q = len(scenarios)
    best = None  # (-profit, order, record)
    for order, (label, principle) in enumerate(principle_grid):
        prem = _premium_rows(principle, payoffs, p)
        k, lp = _best_response(d, payoffs, expected, retained_risk, prem, uninsured)
        if k == d.size:  # farmer stays out
            payoff_vec = np.zeros(q)
            deductible = float("inf")
            profit = 0.0
            pi = 0.0
            risk = uninsured
        else:
            payoff_vec = payoffs[k]
            deductible = float(d[k])
            pi = float(prem[k])
            profit = pi - (1.0 + cost.mu) * float(expected[k])
            risk = float(lp)
        cand = (-profit, order,
                {"leader": label, "deductible": deductible, "payoffs": payoff_vec,
                 "profit": profit, "risk": risk, "premium": pi,
                 "expected": float(payoff_vec @ p)})
        if best is None or cand[:2] < best[:2]:
            best = cand
    rec = best[2]
    return OracleResult(
        leader=rec["leader"], deductible=rec["deductible"], payoffs=rec["payoffs"],
        profit=rec["profit"], farmer_risk=rec["risk"], premium=rec["premium"],
        expected_payoff=rec["expected"],
        evaluations=len(principle_grid) * (len(d_grid) + 1))


def stoploss_oracle(scenarios: ScenarioSet, farmer: FarmerPreference, cost: CostModel,
                    theta_grid, d_grid, rho_grid=None) -> OracleResult:
    """Grid search over loadings (and optionally power exponents).

    With rho_grid None this is the Problem 1 oracle over expected premiums;
    otherwise the Problem 2 oracle over the (theta, rho) product grid.
    """
    thetas = np.asarray(theta_grid, dtype=float)
    if thetas.size == 0:
        raise ValueError("theta grid must be nonempty")
    grid = []
    if rho_grid is None:
        for th in thetas:
            grid.append(({"theta": float(th)}, PremiumPrinciple.expected(th)))
    else:
        rhos = np.asarray(rho_grid, dtype=float)
        if rhos.size == 0:
            raise ValueError("rho grid must be nonempty")
        for th in thetas:
            for r in rhos:
                grid.append(({"theta": float(th), "rho": float(r)},
                             PremiumPrinciple.power(th, r)))
    return _leader_search(scenarios, farmer, cost, d_grid, grid)


def distortion_grid_oracle(scenarios: ScenarioSet, farmer: FarmerPreference,
                           cost: CostModel, curves, d_grid) -> OracleResult:
    """Problem 3 oracle: leader search over a finite family of pricing curves."""
    if len(curves) == 0:
        raise ValueError("curve family must be nonempty")
    grid = [({"curve_index": i, "increments": np.asarray(c.increments).tolist()},
             PremiumPrinciple.general(c))
            for i, c in enumerate(curves)]
    return _leader_search(scenarios, farmer, cost, d_grid, grid)


def knot_curve_family(theta_grid, farmer: FarmerPreference, m: int,
                      rho_grid=None, reservation_scales=(0.9, 0.99, 0.999)):
    """Candidate pricing curves for the Problem 3 oracle.

    Contains the knot discretizations of every Problem 1 curve
    (1+theta) * s, every Problem 2 curve (1+theta) * s**(1/rho), and scaled
    copies of the farmer's own distortion (pricing at a fraction of the
    farmer's certainty equivalent, the surplus-extraction candidates).
    With m a multiple of the scenario count, the discretizations price any
    payoff exactly as their closed forms do.
    """
    curves = []
    for th in np.asarray(theta_grid, dtype=float):
        curves.append(discretize_distortion(DistortionFunction.linear(1.0 + th), m))
    if rho_grid is not None:
        for th in np.asarray(theta_grid, dtype=float):
            for r in np.asarray(rho_grid, dtype=float):
                curves.append(discretize_distortion(
                    DistortionFunction.power(r, 1.0 + th), m))
    base = discretize_distortion(farmer.distortion(), m)
    for c in reservation_scales:
        curves.append(DistortionFunction.knots(c * base.increments))
    return curves
