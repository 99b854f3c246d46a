"""Insurer premium principles and profit.

Three pricing families, in increasing generality:

  expected(theta):      Pi(I) = (1 + theta) * E[I]
  power(theta, rho):    Pi(I) = (1 + theta) * choquet(s**(1/rho), I)
  general(g_i):         Pi(I) = choquet(g_i, I)

Profit nets out a proportional administrative cost: Pi(I) - (1 + mu) E[I].
"""

from dataclasses import dataclass

import numpy as np

from .choquet import (
    DistortionFunction,
    DomainError,
    OutcomeSample,
    choquet,
    choquet_knot_gradient,
    choquet_subgradient,
    choquet_subgradient_smoothed,
    sorted_tail_probabilities,
)

__all__ = [
    "PremiumPrinciple",
    "CostModel",
    "PremiumGradients",
    "premium",
    "insurer_profit",
    "premium_gradients",
]


@dataclass(frozen=True)
class PremiumPrinciple:
    """A pricing rule; use the classmethod constructors."""

    variant: str
    theta: float = 0.0
    rho: float = 1.0
    distortion: DistortionFunction | None = None

    @classmethod
    def expected(cls, theta: float) -> "PremiumPrinciple":
        if theta < 0:
            raise DomainError(f"loading theta must be >= 0, got {theta}")
        return cls(variant="expected", theta=float(theta))

    @classmethod
    def power(cls, theta: float, rho: float) -> "PremiumPrinciple":
        if theta < 0:
            raise DomainError(f"loading theta must be >= 0, got {theta}")
        if rho < 1:
            raise DomainError(f"power rho must be >= 1, got {rho}")
        return cls(variant="power", theta=float(theta), rho=float(rho))

    @classmethod
    def general(cls, distortion: DistortionFunction) -> "PremiumPrinciple":
        return cls(variant="general", distortion=distortion)


@dataclass(frozen=True)
class CostModel:
    """Proportional administrative cost: the insurer pays (1 + mu) E[I]."""

    mu: float = 0.02

    def __post_init__(self):
        if self.mu < 0:
            raise DomainError(f"cost factor mu must be >= 0, got {self.mu}")


def _check_payoffs(sample: OutcomeSample):
    if np.any(sample.values < 0.0):
        raise DomainError("payoff values must be nonnegative")


def premium(principle: PremiumPrinciple, payoffs: OutcomeSample) -> float:
    """Premium charged for the payoff distribution. Always >= 0."""
    _check_payoffs(payoffs)
    if principle.variant == "expected":
        return (1.0 + principle.theta) * payoffs.mean
    if principle.variant == "power":
        g = DistortionFunction.power(principle.rho, 1.0)
        return (1.0 + principle.theta) * choquet(g, payoffs)
    return choquet(principle.distortion, payoffs)


def insurer_profit(principle: PremiumPrinciple, cost: CostModel,
                   payoffs: OutcomeSample) -> float:
    """premium - (1 + mu) E[I]; equals (theta - mu) E[I] under expected pricing."""
    return premium(principle, payoffs) - (1.0 + cost.mu) * payoffs.mean


@dataclass(frozen=True)
class PremiumGradients:
    """Partial derivatives of the premium at a payoff sample.

    d_theta / d_rho / d_increments are None where the variant has no such
    parameter.  d_values is the (sub)gradient with respect to the payoff
    outcomes, exact wherever the sorted order is locally constant.
    """

    d_theta: float | None
    d_rho: float | None
    d_increments: np.ndarray | None
    d_values: np.ndarray


def _power_rho_derivative(rho: float, payoffs: OutcomeSample) -> float:
    # d/drho s**(1/rho) = -s**(1/rho) ln(s) / rho**2, extended by 0 at s = 0
    z, s, _ = sorted_tail_probabilities(payoffs)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(s > 0.0, -(s ** (1.0 / rho)) * np.log(s) / rho**2, 0.0)
    return float(np.diff(np.concatenate(([0.0], h))) @ z)


def premium_gradients(principle: PremiumPrinciple, cost: CostModel,
                      payoffs: OutcomeSample, smooth_ties: bool = False) -> PremiumGradients:
    """Exact partials of premium(principle, payoffs) where smooth.

    smooth_ties selects the tie-symmetrized Choquet subgradient for
    d_values (used by the training loop); both selections agree wherever
    the payoff values are pairwise distinct.
    """
    _check_payoffs(payoffs)
    subgrad = choquet_subgradient_smoothed if smooth_ties else choquet_subgradient
    if principle.variant == "expected":
        return PremiumGradients(
            d_theta=payoffs.mean,
            d_rho=None,
            d_increments=None,
            d_values=(1.0 + principle.theta) * payoffs.probs,
        )
    if principle.variant == "power":
        g = DistortionFunction.power(principle.rho, 1.0)
        return PremiumGradients(
            d_theta=choquet(g, payoffs),
            d_rho=(1.0 + principle.theta) * _power_rho_derivative(principle.rho, payoffs),
            d_increments=None,
            d_values=(1.0 + principle.theta) * subgrad(g, payoffs),
        )
    g = principle.distortion
    d_inc = choquet_knot_gradient(g, payoffs) if g.kind == "knots" else None
    return PremiumGradients(
        d_theta=None,
        d_rho=None,
        d_increments=d_inc,
        d_values=subgrad(g, payoffs),
    )
