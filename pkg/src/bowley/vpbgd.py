"""Value-gap penalized bilevel gradient descent.

Each outer iteration refreshes an inner copy of the follower model from the
current one, runs a fixed number of subgradient steps on the farmer's
objective (the inner solve), and then steps leader parameters and follower
parameters jointly on the penalized combined objective

    F = -profit + gamma * (LP(I) - LP(I_hat)),

projecting the leader afterwards (theta >= 0, rho >= 1; knot curves are
feasible by construction).  The leader part of the penalty gradient treats
LP(I_hat) as the lower-level value function, differentiating it at the
frozen inner solution (Danskin subgradient).

Step sizes decay geometrically: step n uses base * decay**n with n
1-based; the inner schedule restarts at every outer iteration.  The inner
solve returns the best iterate seen (including its starting point), so the
value gap is nonnegative by construction.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .choquet import OutcomeSample, choquet, choquet_subgradient_smoothed
from .game import GameConfig, ScenarioSet, lower_objective, upper_objective
from .payoff import MonotonePricingCurve, PayoffArch, PayoffModel, payoff_batch
from .premium import PremiumPrinciple, premium, premium_gradients

__all__ = [
    "SolverConfig",
    "LeaderState",
    "SolverState",
    "EquilibriumReport",
    "DivergenceError",
    "inner_solve",
    "outer_step",
    "project_leader",
    "solve",
    "report_consistency_errors",
]

REPORT_TOL = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes, penalty weight and iteration budgets."""

    alpha0: float = 0.1
    beta: float | None = None  # inner step size; defaults to alpha0
    decay: float = 0.96
    gamma: float = 10.0
    outer_iters: int = 300
    inner_iters: int = 50
    seed: int = 0
    tolerance: float = REPORT_TOL
    curve_step_scale: float = 25.0  # conditioning for P3 raw knot parameters
    follower_scale: float = 0.05  # damping on the outer follower step
    follower_clip: float = 0.5  # elementwise clip of the follower upstream
    warmup_rounds: int = 6  # annealed inner solves fitting the follower first
    leader_clip: float = 25.0  # per-coordinate leader gradient clip
    divergence_limit: float = 1e12

    def __post_init__(self):
        if self.alpha0 <= 0:
            raise ValueError(f"alpha0 must be > 0, got {self.alpha0}")
        if self.beta is not None and self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {self.decay}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration budgets must be >= 1")

    @property
    def inner_step(self) -> float:
        return self.beta if self.beta is not None else self.alpha0


class DivergenceError(RuntimeError):
    """Objective or gradient left the finite range; carries a partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class LeaderState:
    """Current leader parameters; which ones are live depends on the problem."""

    theta: float = 0.0
    rho: float = 1.0
    curve: MonotonePricingCurve | None = None

    def principle(self, problem: str) -> PremiumPrinciple:
        if problem == "P1":
            return PremiumPrinciple.expected(self.theta)
        if problem == "P2":
            return PremiumPrinciple.power(self.theta, self.rho)
        return PremiumPrinciple.general(self.curve.distortion())


def project_leader(leader: LeaderState) -> LeaderState:
    """Clamp onto the feasible set: theta >= 0, rho >= 1 (in place)."""
    leader.theta = max(leader.theta, 0.0)
    leader.rho = max(leader.rho, 1.0)
    return leader


@dataclass
class SolverState:
    """Mutable state shared by the outer loop and outer_step()."""

    cfg: GameConfig
    scfg: SolverConfig
    scenarios: ScenarioSet
    leader: LeaderState
    model: PayoffModel
    ref_model: PayoffModel | None = None
    iteration: int = 0
    up_losses: list = field(default_factory=list)
    lp_losses: list = field(default_factory=list)
    value_gaps: list = field(default_factory=list)
    inner_nonmonotone_steps: int = 0


def _lp_parts(cfg, principle, payoffs: OutcomeSample, losses: np.ndarray):
    """LP value, its payoff-value subgradient, and the premium gradients.

    Uses the tie-symmetrized subgradient selection: the positional rule
    cycles exactly at the equilibria this game converges to (the farmer
    indifferent across tied net outcomes).
    """
    gf = cfg.farmer.distortion()
    retained = OutcomeSample(losses - payoffs.values, payoffs.probs)
    pg = premium_gradients(principle, cfg.cost, payoffs, smooth_ties=True)
    lp = choquet(gf, retained) + premium(principle, payoffs)
    d_values = -choquet_subgradient_smoothed(gf, retained) + pg.d_values
    return lp, d_values, pg


def _snapshot(net):
    return [p.copy() for _, p, _ in net.parameters()]


def _restore(net, snap):
    for (_, p, g), q in zip(net.parameters(), snap):
        p[...] = q
        g[...] = 0.0


def inner_solve(cfg: GameConfig, scfg: SolverConfig, principle: PremiumPrinciple,
                scenarios: ScenarioSet, start: PayoffModel):
    """Refine a copy of `start` on the farmer's objective; return (copy, info).

    Runs inner_iters subgradient steps with step beta * decay**t (t 1-based)
    and keeps the best iterate seen, the starting point included, so the
    returned model never has a higher LP value than `start`.
    """
    ref = start.clone()
    losses = scenarios.losses
    best_lp = np.inf
    best_params = None
    prev_lp = np.inf
    nonmonotone = 0
    for t in range(scfg.inner_iters + 1):
        values = ref.evaluate(scenarios)
        payoffs = OutcomeSample(values, scenarios.probs)
        lp, d_values, _ = _lp_parts(cfg, principle, payoffs, losses)
        if not np.isfinite(lp):
            raise DivergenceError(f"non-finite lower objective in inner solve (step {t})")
        if lp < best_lp:
            best_lp = lp
            best_params = _snapshot(ref.net)
        if t > 0 and lp > prev_lp + 1e-12:
            nonmonotone += 1
        prev_lp = lp
        if t == scfg.inner_iters:
            break
        ref.net.zero_grad()
        ref.backward(d_values)
        ref.net.sgd_step(scfg.inner_step * scfg.decay ** (t + 1))
    _restore(ref.net, best_params)
    return ref, {"lp": best_lp, "nonmonotone_steps": nonmonotone}


def _leader_penalty_grads(cfg, scfg, principle, pg_model, pg_ref):
    """Gradient of -profit + gamma*(LP(I) - LP(I_hat)) w.r.t. leader params.

    The leader enters both objectives only through the premium, so each
    partial is built from the premium partials at the two payoff samples.
    """
    g = scfg.gamma
    out = {}
    if cfg.problem in ("P1", "P2"):
        out["theta"] = -pg_model.d_theta + g * (pg_model.d_theta - pg_ref.d_theta)
    if cfg.problem == "P2":
        out["rho"] = -pg_model.d_rho + g * (pg_model.d_rho - pg_ref.d_rho)
    if cfg.problem == "P3":
        out["increments"] = (-pg_model.d_increments
                             + g * (pg_model.d_increments - pg_ref.d_increments))
    return out


def outer_step(state: SolverState) -> SolverState:
    """One projected joint step on the combined objective.

    Requires state.ref_model (the inner solution for the current iterate);
    increments state.iteration and uses step alpha0 * decay**iteration.
    """
    cfg, scfg = state.cfg, state.scfg
    scenarios = state.scenarios
    if state.ref_model is None:
        raise RuntimeError("outer_step requires ref_model from inner_solve")
    principle = state.leader.principle(cfg.problem)
    probs = scenarios.probs

    values = state.model.evaluate(scenarios)
    payoffs = OutcomeSample(values, probs)
    lp_model, d_lp_values, pg_model = _lp_parts(cfg, principle, payoffs, scenarios.losses)
    ref_payoffs = payoff_batch(state.ref_model, scenarios)
    pg_ref = premium_gradients(principle, cfg.cost, ref_payoffs)

    # Follower block: the combined-objective direction, elementwise-clipped
    # (the gamma-weighted gap term otherwise slams the piecewise-linear
    # landscape) and stepped with extra damping via follower_scale.
    d_up_values = pg_model.d_values - (1.0 + cfg.cost.mu) * probs
    upstream = -d_up_values + scfg.gamma * d_lp_values
    if not np.all(np.isfinite(upstream)):
        raise DivergenceError("non-finite follower gradient in outer step")
    upstream = np.clip(upstream, -scfg.follower_clip, scfg.follower_clip)

    leader_grads = _leader_penalty_grads(cfg, scfg, principle, pg_model, pg_ref)
    for name, v in leader_grads.items():
        if not np.all(np.isfinite(v)):
            raise DivergenceError("non-finite leader gradient in outer step")
        # bound single-step leader moves; the gap term carries a factor gamma
        # and would otherwise slam theta across the whole response landscape
        leader_grads[name] = np.clip(v, -scfg.leader_clip, scfg.leader_clip)

    state.iteration += 1
    step = scfg.alpha0 * scfg.decay ** state.iteration

    state.model.net.zero_grad()
    state.model.backward(upstream)
    state.model.net.sgd_step(step * scfg.follower_scale)

    if "theta" in leader_grads:
        state.leader.theta -= step * leader_grads["theta"]
    if "rho" in leader_grads:
        state.leader.rho -= step * leader_grads["rho"]
    if "increments" in leader_grads:
        curve = state.leader.curve
        raw_grad = leader_grads["increments"] * curve.increment_jacobian()
        curve.raw_increments -= step * scfg.curve_step_scale * raw_grad
    project_leader(state.leader)
    return state


@dataclass
class EquilibriumReport:
    """Final leader parameters, equilibrium quantities and training curves."""

    problem: str
    mode: str
    seed: int
    theta: float | None
    rho: float | None
    curve_increments: list | None
    curve_grid: dict | None
    insurer_profit: float
    farmer_risk: float
    premium: float
    expected_payoff: float
    uninsured_risk: float
    final_value_gap: float
    curves: dict
    payoff_trace: list
    config: dict
    diagnostics: dict
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "mode": self.mode,
            "seed": self.seed,
            "leader": {
                "theta": self.theta,
                "rho": self.rho,
                "curve_increments": self.curve_increments,
                "curve_grid": self.curve_grid,
            },
            "insurer_profit": self.insurer_profit,
            "farmer_risk": self.farmer_risk,
            "premium": self.premium,
            "expected_payoff": self.expected_payoff,
            "uninsured_risk": self.uninsured_risk,
            "final_value_gap": self.final_value_gap,
            "curves": self.curves,
            "payoff_trace": self.payoff_trace,
            "config": self.config,
            "diagnostics": self.diagnostics,
            "diverged": self.diverged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _default_arch(mode: str) -> PayoffArch:
    return PayoffArch(kind="mlp")


def build_payoff_model(cfg: GameConfig, scenarios: ScenarioSet,
                       arch: PayoffArch | None, rng) -> PayoffModel:
    arch = arch if arch is not None else _default_arch(cfg.mode)
    if cfg.mode == "index":
        if scenarios.weather is None:
            raise ValueError("index mode requires scenario weather grids")
        rows, cols = scenarios.weather.shape[1], scenarios.weather.shape[2]
        model = PayoffModel.index_grid(rows, arch, rng, cols=cols)
    else:
        model = PayoffModel.scalar_loss(arch, rng)
    model.fit_normalization(scenarios)
    _lift_dead_outputs(model, scenarios)
    return model


def _lift_dead_outputs(model: PayoffModel, scenarios: ScenarioSet):
    """Raise the output bias until every training scenario starts active.

    The final ReLU zeroes gradients wherever its pre-activation is negative;
    a scenario that initializes dead (typically the largest loss, sitting in
    the tail of the standardized inputs) could then never obtain coverage.
    """
    x = model._net_inputs(scenarios)
    for layer in model.net.layers[:-1]:
        x = layer.forward(x)
    pre = x[:, 0]
    eps = 0.01 * (scenarios.losses.std() + 1e-9)
    lift = eps - pre.min()
    if lift > 0:
        model.net.layers[-2].bias += lift


def _config_echo(cfg: GameConfig, scfg: SolverConfig, arch: PayoffArch) -> dict:
    return {
        "game": {
            "problem": cfg.problem,
            "mode": cfg.mode,
            "mu": cfg.cost.mu,
            "farmer": {"kind": cfg.farmer.kind, "alpha": cfg.farmer.alpha,
                       "lambda": cfg.farmer.lam},
            "theta0": cfg.theta0,
            "rho0": cfg.rho0,
            "curve_scale0": cfg.initial_curve_scale() if cfg.problem == "P3" else None,
            "knots": cfg.knots,
        },
        "solver": {
            "alpha0": scfg.alpha0,
            "beta": scfg.inner_step,
            "decay": scfg.decay,
            "gamma": scfg.gamma,
            "outer_iters": scfg.outer_iters,
            "inner_iters": scfg.inner_iters,
            "seed": scfg.seed,
            "curve_step_scale": scfg.curve_step_scale,
        },
        "arch": {
            "kind": arch.kind,
            "hidden": list(arch.hidden),
            "conv_channels": list(arch.conv_channels),
            "dense": list(arch.dense),
            "kernel": list(arch.kernel),
            "pool": list(arch.pool),
        },
    }


def _build_report(state: SolverState, arch: PayoffArch, final_gap: float,
                  diverged: bool = False) -> EquilibriumReport:
    cfg = state.cfg
    principle = state.leader.principle(cfg.problem)
    payoffs = payoff_batch(state.model, state.scenarios)
    profit = upper_objective(cfg, principle, state.model, state.scenarios)
    farmer_risk = lower_objective(cfg, principle, state.model, state.scenarios)
    pi = premium(principle, payoffs)
    uninsured = choquet(cfg.farmer.distortion(), state.scenarios.loss_sample())

    curve_inc = None
    curve_grid = None
    if cfg.problem == "P3":
        g = state.leader.curve.distortion()
        grid_s = np.linspace(0.0, 1.0, 101)
        curve_inc = state.leader.curve.increments().tolist()
        curve_grid = {"s": grid_s.tolist(), "g": np.asarray(g(grid_s)).tolist()}

    trace = [
        {"id": i, "prob": float(state.scenarios.probs[i]),
         "loss": float(state.scenarios.losses[i]), "payoff": float(payoffs.values[i])}
        for i in range(len(state.scenarios))
    ]
    return EquilibriumReport(
        problem=cfg.problem,
        mode=cfg.mode,
        seed=state.scfg.seed,
        theta=state.leader.theta if cfg.problem in ("P1", "P2") else None,
        rho=state.leader.rho if cfg.problem == "P2" else None,
        curve_increments=curve_inc,
        curve_grid=curve_grid,
        insurer_profit=profit,
        farmer_risk=farmer_risk,
        premium=pi,
        expected_payoff=payoffs.mean,
        uninsured_risk=uninsured,
        final_value_gap=final_gap,
        curves={"up_loss": state.up_losses, "lp_loss": state.lp_losses,
                "value_gap": state.value_gaps},
        payoff_trace=trace,
        config=_config_echo(cfg, state.scfg, arch),
        diagnostics={"inner_nonmonotone_steps": state.inner_nonmonotone_steps},
        diverged=diverged,
    )


def solve(cfg: GameConfig, scfg: SolverConfig, scenarios: ScenarioSet,
          arch: PayoffArch | None = None) -> EquilibriumReport:
    """Run the full penalized bilevel descent; deterministic given the seed."""
    arch = arch if arch is not None else _default_arch(cfg.mode)
    rng = np.random.default_rng(scfg.seed)
    model = build_payoff_model(cfg, scenarios, arch, rng)
    leader = LeaderState(theta=cfg.theta0, rho=cfg.rho0)
    if cfg.problem == "P3":
        leader.curve = MonotonePricingCurve.linear(cfg.initial_curve_scale(), cfg.knots)
    project_leader(leader)
    state = SolverState(cfg=cfg, scfg=scfg, scenarios=scenarios,
                        leader=leader, model=model)

    # Fit the follower to its initial best response before stepping the
    # leader; a cold-started payoff net sits far below the inner solution,
    # which flips the sign of the penalty's leader gradient.  Each round
    # halves the inner step: identical rounds would retrace the same
    # trajectory (best-iterate fixed point) instead of refining.
    principle0 = leader.principle(cfg.problem)
    for r in range(scfg.warmup_rounds):
        rcfg = replace(scfg, beta=scfg.inner_step * 0.5**r)
        state.model, _ = inner_solve(cfg, rcfg, principle0, scenarios, state.model)

    for _ in range(scfg.outer_iters):
        principle = state.leader.principle(cfg.problem)
        ref, info = inner_solve(cfg, scfg, principle, scenarios, state.model)
        state.ref_model = ref
        state.inner_nonmonotone_steps += info["nonmonotone_steps"]

        lp_model = lower_objective(cfg, principle, state.model, scenarios)
        profit = upper_objective(cfg, principle, state.model, scenarios)
        gap = lp_model - info["lp"]
        state.up_losses.append(-profit)
        state.lp_losses.append(lp_model)
        state.value_gaps.append(gap)

        combined = -profit + scfg.gamma * gap
        if not np.isfinite(combined) or abs(combined) > scfg.divergence_limit:
            report = _build_report(state, arch, final_gap=gap, diverged=True)
            raise DivergenceError(
                f"combined objective diverged at iteration {state.iteration + 1}:"
                f" {combined!r}", report=report)
        try:
            outer_step(state)
        except DivergenceError as e:
            if e.report is None:
                e.report = _build_report(state, arch, final_gap=gap, diverged=True)
            raise

    principle = state.leader.principle(cfg.problem)
    ref, info = inner_solve(cfg, scfg, principle, scenarios, state.model)
    final_gap = lower_objective(cfg, principle, state.model, scenarios) - info["lp"]
    return _build_report(state, arch, final_gap=final_gap)


def report_consistency_errors(report: dict) -> list:
    """Recompute the reported equilibrium quantities from the payoff trace.

    Returns a list of human-readable discrepancies (empty when the report is
    internally consistent within the reporting tolerance).
    """
    from .premium import CostModel, insurer_profit
    from .choquet import DistortionFunction

    errs = []
    trace = report["payoff_trace"]
    probs = np.array([r["prob"] for r in trace])
    losses = np.array([r["loss"] for r in trace])
    payoffs = np.array([r["payoff"] for r in trace])
    sample = OutcomeSample(payoffs, probs)

    leader = report["leader"]
    problem = report["problem"]
    if problem == "P1":
        principle = PremiumPrinciple.expected(leader["theta"])
    elif problem == "P2":
        principle = PremiumPrinciple.power(leader["theta"], leader["rho"])
    else:
        principle = PremiumPrinciple.general(
            DistortionFunction.knots(np.asarray(leader["curve_increments"])))

    game_cfg = report["config"]["game"]
    cost = CostModel(game_cfg["mu"])
    fk = game_cfg["farmer"]
    if fk["kind"] == "cvar":
        gf = DistortionFunction.cvar(fk["alpha"])
    else:
        gf = DistortionFunction.convex_combo(fk["lambda"], fk["alpha"])

    tol = REPORT_TOL
    pi = premium(principle, sample)
    profit = insurer_profit(principle, cost, sample)
    retained = OutcomeSample(losses - payoffs, probs)
    risk = choquet(gf, retained) + pi
    checks = [
        ("insurer_profit", profit, report["insurer_profit"]),
        ("premium", pi, report["premium"]),
        ("farmer_risk", risk, report["farmer_risk"]),
        ("expected_payoff", sample.mean, report["expected_payoff"]),
    ]
    for name, recomputed, reported in checks:
        if abs(recomputed - reported) > tol:
            errs.append(f"{name}: reported {reported!r} but recomputed {recomputed!r}")
    return errs
