"""Bilevel game objectives: farmer risk (lower level), insurer profit (upper).

The farmer minimizes the distorted risk of net wealth loss
Z* = Y - I + Pi(I); since the farmer's distortion has g(1) = 1, this
equals choquet(g_f, Y - I) + Pi(I) by translation, which is how it is
evaluated (one sort per call instead of two).

Problems, by insurer feasible set:
  P1  expected premium, one loading parameter theta
  P2  power-distortion premium, parameters (theta, rho)
  P3  general premium, a free monotone pricing curve
"""

from dataclasses import dataclass, field

import numpy as np

from .choquet import DistortionFunction, DomainError, OutcomeSample, choquet
from .payoff import PayoffModel, payoff_batch
from .premium import CostModel, PremiumPrinciple, insurer_profit, premium

__all__ = [
    "ScenarioSet",
    "FarmerPreference",
    "GameConfig",
    "lower_objective",
    "upper_objective",
    "combined_objective",
]

_PROB_TOL = 1e-12

PROBLEMS = ("P1", "P2", "P3")
MODES = ("index", "indemnity")


@dataclass(frozen=True)
class ScenarioSet:
    """Finite empirical state space: losses, probabilities, optional weather.

    weather has shape (n, rows, 12) in index mode and is None for
    indemnity-only data.  probs form a strictly positive simplex; losses
    are finite and nonnegative.
    """

    losses: np.ndarray
    probs: np.ndarray
    weather: np.ndarray | None = None

    def __init__(self, losses, probs, weather=None):
        y = np.asarray(losses, dtype=float)
        p = np.asarray(probs, dtype=float)
        if y.ndim != 1 or p.shape != y.shape or y.size == 0:
            raise DomainError("losses and probs must be equal-length nonempty vectors")
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise DomainError("losses must be finite and >= 0")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > _PROB_TOL:
            raise DomainError("probs must be strictly positive and sum to 1")
        w = None
        if weather is not None:
            w = np.asarray(weather, dtype=float)
            if w.ndim != 3 or w.shape[0] != y.size:
                raise DomainError(f"weather must have shape (n, rows, months), got {w.shape}")
            if not np.all(np.isfinite(w)):
                raise DomainError("weather entries must be finite")
            w = w.copy()
            w.flags.writeable = False
        y, p = y.copy(), p.copy()
        y.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "losses", y)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "weather", w)

    def __len__(self) -> int:
        return self.losses.size

    def loss_sample(self) -> OutcomeSample:
        return OutcomeSample(self.losses, self.probs)


@dataclass(frozen=True)
class FarmerPreference:
    """The farmer's concave distortion with g(1) = 1: CVaR or a mean/CVaR blend."""

    kind: str = "cvar"
    alpha: float = 0.8
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("cvar", "convex_combo"):
            raise DomainError(f"farmer kind must be 'cvar' or 'convex_combo', got {self.kind!r}")
        self.distortion()  # validate parameters eagerly

    def distortion(self) -> DistortionFunction:
        if self.kind == "cvar":
            return DistortionFunction.cvar(self.alpha)
        return DistortionFunction.convex_combo(self.lam, self.alpha)


@dataclass(frozen=True)
class GameConfig:
    """Which game to solve and from where the leader starts."""

    problem: str = "P1"
    mode: str = "indemnity"
    cost: CostModel = field(default_factory=CostModel)
    farmer: FarmerPreference = field(default_factory=FarmerPreference)
    theta0: float = 0.1
    rho0: float = 1.0
    curve_scale0: float | None = None  # P3 initial curve g(s) = scale * s
    knots: int = 100

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise DomainError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.theta0 < 0:
            raise DomainError(f"theta0 must be >= 0, got {self.theta0}")
        if self.rho0 < 1:
            raise DomainError(f"rho0 must be >= 1, got {self.rho0}")
        if self.knots < 1:
            raise DomainError(f"knots must be >= 1, got {self.knots}")
        if self.curve_scale0 is not None and self.curve_scale0 <= 0:
            raise DomainError(f"curve_scale0 must be > 0, got {self.curve_scale0}")

    def initial_curve_scale(self) -> float:
        return self.curve_scale0 if self.curve_scale0 is not None else 1.0 + self.theta0


def lower_objective(cfg: GameConfig, principle: PremiumPrinciple,
                    model: PayoffModel, scenarios: ScenarioSet) -> float:
    """Farmer's distorted risk of Y - I + Pi(I) under the given pricing rule."""
    payoffs = payoff_batch(model, scenarios)
    pi = premium(principle, payoffs)
    retained = OutcomeSample(scenarios.losses - payoffs.values, scenarios.probs)
    return choquet(cfg.farmer.distortion(), retained) + pi


def upper_objective(cfg: GameConfig, principle: PremiumPrinciple,
                    model: PayoffModel, scenarios: ScenarioSet) -> float:
    """Insurer profit Pi(I) - (1 + mu) E[I]; the solver minimizes its negation."""
    return insurer_profit(principle, cfg.cost, payoff_batch(model, scenarios))


def combined_objective(cfg: GameConfig, principle: PremiumPrinciple,
                       model: PayoffModel, ref_model: PayoffModel,
                       scenarios: ScenarioSet, gamma: float) -> float:
    """Penalized single-level objective: -profit + gamma * value gap.

    ref_model is the inner-loop-refined follower copy whose lower objective
    approximates the lower-level value function.
    """
    if gamma <= 0:
        raise DomainError(f"penalty weight gamma must be > 0, got {gamma}")
    gap = (lower_objective(cfg, principle, model, scenarios)
           - lower_objective(cfg, principle, ref_model, scenarios))
    return -upper_objective(cfg, principle, model, scenarios) + gamma * gap
