"""Bowley insurance equilibria via penalized bilevel gradient descent.

A leader-follower insurance game on finite scenario data: the farmer
(follower) picks a nonnegative payoff function of weather indices or of
the realized loss to minimize a distortion risk measure; the insurer
(leader) picks premium-principle parameters to maximize profit.  The
solver folds the two levels into one penalized objective using the
lower-level value gap; brute-force grid oracles verify it on tiny
instances.
"""

from .choquet import (
    DistortionFunction,
    DomainError,
    OutcomeSample,
    choquet,
    choquet_subgradient,
    discretize_distortion,
    empirical_cvar,
    evaluate_distortion,
)
from .game import FarmerPreference, GameConfig, ScenarioSet
from .game import combined_objective, lower_objective, upper_objective
from .payoff import MonotonePricingCurve, PayoffArch, PayoffModel, payoff_batch, pricing_curve
from .premium import CostModel, PremiumPrinciple, insurer_profit, premium, premium_gradients
from .vpbgd import DivergenceError, EquilibriumReport, SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "DistortionFunction",
    "DomainError",
    "OutcomeSample",
    "choquet",
    "choquet_subgradient",
    "discretize_distortion",
    "empirical_cvar",
    "evaluate_distortion",
    "FarmerPreference",
    "GameConfig",
    "ScenarioSet",
    "combined_objective",
    "lower_objective",
    "upper_objective",
    "MonotonePricingCurve",
    "PayoffArch",
    "PayoffModel",
    "payoff_batch",
    "pricing_curve",
    "CostModel",
    "PremiumPrinciple",
    "insurer_profit",
    "premium",
    "premium_gradients",
    "DivergenceError",
    "EquilibriumReport",
    "SolverConfig",
    "solve",
    "__version__",
]
