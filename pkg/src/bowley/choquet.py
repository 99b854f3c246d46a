"""Distortion risk measures and Choquet integrals on empirical distributions.

A distortion function g: [0,1] -> R+ is continuous, nondecreasing and has
g(0) = 0.  For a random outcome Z on a finite probability space, the
(signed) Choquet integral is computed as a weighted sum over outcomes
sorted in descending order:

    choquet(g, Z) = sum_k (g(S_k) - g(S_{k-1})) * z_(k),

where z_(1) >= ... >= z_(q) and S_k is the cumulative probability of the k
largest outcomes (S_0 = 0).  For nonnegative Z this equals
int_0^inf g(P(Z > z)) dz; negative outcomes are handled by the same sum
(the signed integral).  Note the general form carries a g(1) factor on the
smallest outcome, so distortions with g(1) != 1 (e.g. loaded premiums
g(s) = (1+theta)s) are priced correctly.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DomainError",
    "DistortionFunction",
    "OutcomeSample",
    "evaluate_distortion",
    "choquet",
    "choquet_subgradient",
    "choquet_subgradient_smoothed",
    "choquet_knot_gradient",
    "empirical_cvar",
    "discretize_distortion",
    "sorted_tail_probabilities",
]

_PROB_TOL = 1e-12


class DomainError(ValueError):
    """Raised when an argument is outside its mathematical domain."""


@dataclass(frozen=True)
class DistortionFunction:
    """One of the supported distortion families.

    kind is "linear", "cvar", "convex_combo", "power" or "knots".  Use the
    classmethod constructors; they validate parameters.  Instances are
    immutable and safe to share across threads.
    """

    kind: str
    scale: float = 1.0
    alpha: float = 0.0
    lam: float = 0.0
    rho: float = 1.0
    increments: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def linear(cls, scale: float = 1.0) -> "DistortionFunction":
        """g(s) = scale * s."""
        if scale < 0:
            raise DomainError(f"linear scale must be >= 0, got {scale}")
        return cls(kind="linear", scale=float(scale))

    @classmethod
    def cvar(cls, alpha: float) -> "DistortionFunction":
        """g(s) = min(s / (1 - alpha), 1), the CVaR / expected-shortfall kink."""
        if not 0.0 < alpha < 1.0:
            raise DomainError(f"cvar alpha must be in (0, 1), got {alpha}")
        return cls(kind="cvar", alpha=float(alpha))

    @classmethod
    def convex_combo(cls, lam: float, alpha: float) -> "DistortionFunction":
        """g(s) = lam*s + (1-lam)*min(s/(1-alpha), 1): mean/CVaR blend."""
        if not 0.0 <= lam <= 1.0:
            raise DomainError(f"convex_combo lambda must be in [0, 1], got {lam}")
        if not 0.0 < alpha < 1.0:
            raise DomainError(f"convex_combo alpha must be in (0, 1), got {alpha}")
        return cls(kind="convex_combo", lam=float(lam), alpha=float(alpha))

    @classmethod
    def power(cls, rho: float, scale: float = 1.0) -> "DistortionFunction":
        """g(s) = scale * s**(1/rho), the proportional-hazards transform."""
        if rho < 1.0:
            raise DomainError(f"power rho must be >= 1, got {rho}")
        if scale < 0:
            raise DomainError(f"power scale must be >= 0, got {scale}")
        return cls(kind="power", rho=float(rho), scale=float(scale))

    @classmethod
    def knots(cls, increments) -> "DistortionFunction":
        """Piecewise-linear g through M+1 uniform abscissae.

        increments[j] >= 0 is the rise of g over [j/M, (j+1)/M]; g(0) = 0 and
        monotonicity hold by construction.
        """
        inc = np.asarray(increments, dtype=float)
        if inc.ndim != 1 or inc.size == 0:
            raise DomainError("knots increments must be a nonempty 1-d vector")
        if not np.all(np.isfinite(inc)):
            raise DomainError("knots increments must be finite")
        if np.any(inc < 0):
            raise DomainError("knots increments must be >= 0")
        inc = inc.copy()
        inc.flags.writeable = False
        return cls(kind="knots", increments=inc)

    @property
    def g1(self) -> float:
        """g(1), the total distorted mass."""
        if self.kind == "linear":
            return self.scale
        if self.kind in ("cvar", "convex_combo"):
            return 1.0
        if self.kind == "power":
            return self.scale
        return float(self.increments.sum())

    def __call__(self, s):
        return evaluate_distortion(self, s)


def evaluate_distortion(g: DistortionFunction, s):
    """Evaluate g pointwise on s (scalar or array) in [0, 1]."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"distortion argument must lie in [0, 1], got {s}")
    if g.kind == "linear":
        out = g.scale * arr
    elif g.kind == "cvar":
        out = np.minimum(arr / (1.0 - g.alpha), 1.0)
    elif g.kind == "convex_combo":
        out = g.lam * arr + (1.0 - g.lam) * np.minimum(arr / (1.0 - g.alpha), 1.0)
    elif g.kind == "power":
        out = g.scale * arr ** (1.0 / g.rho)
    elif g.kind == "knots":
        m = g.increments.size
        xs = np.linspace(0.0, 1.0, m + 1)
        ys = np.concatenate(([0.0], np.cumsum(g.increments)))
        out = np.interp(arr, xs, ys)
    else:  # pragma: no cover - constructors forbid this
        raise DomainError(f"unknown distortion kind {g.kind!r}")
    if np.isscalar(s) or arr.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class OutcomeSample:
    """Empirical distribution of a scalar outcome: values with probabilities.

    probs must be strictly positive and sum to 1 within 1e-12; values must
    be finite.  Values may be negative (signed outcomes such as net wealth
    changes are allowed).
    """

    values: np.ndarray
    probs: np.ndarray

    def __init__(self, values, probs):
        v = np.asarray(values, dtype=float)
        p = np.asarray(probs, dtype=float)
        if v.ndim != 1 or p.ndim != 1 or v.shape != p.shape or v.size == 0:
            raise DomainError("values and probs must be equal-length nonempty vectors")
        if not np.all(np.isfinite(v)):
            raise DomainError("outcome values must be finite")
        if np.any(p <= 0.0):
            raise DomainError("probabilities must be strictly positive")
        if abs(p.sum() - 1.0) > _PROB_TOL:
            raise DomainError(f"probabilities must sum to 1, got {p.sum()!r}")
        v = v.copy()
        p = p.copy()
        v.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.values.size

    @property
    def mean(self) -> float:
        return float(self.values @ self.probs)


def sorted_tail_probabilities(sample: OutcomeSample):
    """Descending-sorted values with their cumulative tail probabilities.

    Returns (z, S, order): z = values[order] descending, S_k = probability of
    the k+1 largest outcomes.  Ties sort by ascending original index, which
    pins down the subgradient selection.
    """
    order = np.argsort(-sample.values, kind="stable")
    z = sample.values[order]
    s = np.minimum(np.cumsum(sample.probs[order]), 1.0)
    return z, s, order


def _sorted_weights(g: DistortionFunction, sample: OutcomeSample):
    z, s, order = sorted_tail_probabilities(sample)
    gs = evaluate_distortion(g, np.concatenate(([0.0], s)))
    # monotone g on monotone S; clamp the <=1ulp rounding dips
    w = np.maximum(np.diff(gs), 0.0)
    return z, w, order


def choquet(g: DistortionFunction, sample: OutcomeSample) -> float:
    """Signed Choquet integral of the sample under distortion g."""
    z, w, _ = _sorted_weights(g, sample)
    return float(w @ z)


def choquet_subgradient(g: DistortionFunction, sample: OutcomeSample) -> np.ndarray:
    """Subgradient of choquet(g, .) with respect to the outcome values.

    Entry i receives the sorted weight g(S_k) - g(S_{k-1}) of its position k
    in the descending order.  At outcome vectors with pairwise-distinct
    values this is the exact gradient; at ties it is one valid selection,
    made deterministic by the stable sort.
    """
    z, w, order = _sorted_weights(g, sample)
    out = np.empty_like(w)
    out[order] = w
    return out


def choquet_subgradient_smoothed(g: DistortionFunction, sample: OutcomeSample) -> np.ndarray:
    """Tie-symmetrized subgradient selection.

    Identical to choquet_subgradient at pairwise-distinct values.  Within a
    block of exactly tied values the block's total sorted weight is split in
    proportion to the outcome probabilities instead of being assigned by
    sort position.  This selection does not cycle when gradient descent
    parks a whole block of outcomes on a tie (e.g. a fully insured farmer),
    where the positional rule rotates weight through the tied coordinates.
    """
    z, s, order = sorted_tail_probabilities(sample)
    gs = evaluate_distortion(g, np.concatenate(([0.0], s)))
    w = np.maximum(np.diff(gs), 0.0)
    p = sample.probs[order]
    out = np.empty_like(w)
    start = 0
    q = z.size
    while start < q:
        stop = start + 1
        while stop < q and z[stop] == z[start]:
            stop += 1
        block_p = p[start:stop]
        out[start:stop] = w[start:stop].sum() * block_p / block_p.sum()
        start = stop
    result = np.empty_like(out)
    result[order] = out
    return result


def choquet_knot_gradient(g: DistortionFunction, sample: OutcomeSample) -> np.ndarray:
    """Gradient of choquet(knots(inc), sample) with respect to inc.

    choquet is linear in the knot increments: g(s) = sum_j inc_j * phi_j(s)
    with hat coefficients phi_j(s) = clip(M*s - j, 0, 1), so the gradient is
    sum_k (phi_j(S_k) - phi_j(S_{k-1})) * z_(k).
    """
    if g.kind != "knots":
        raise DomainError("choquet_knot_gradient requires a knots distortion")
    m = g.increments.size
    z, s, _ = sorted_tail_probabilities(sample)
    phi = np.clip(np.concatenate(([0.0], s))[:, None] * m - np.arange(m)[None, :], 0.0, 1.0)
    return np.diff(phi, axis=0).T @ z


def empirical_cvar(alpha: float, sample: OutcomeSample) -> float:
    """CVaR_alpha as the exact quantile integral (1/(1-a)) int_a^1 VaR_u du.

    Computed from the piecewise-constant quantile function of the discrete
    distribution, independently of the Choquet sum; equals
    choquet(cvar(alpha), sample).
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"cvar alpha must be in (0, 1), got {alpha}")
    order = np.argsort(sample.values, kind="stable")
    v = sample.values[order]
    c = np.minimum(np.cumsum(sample.probs[order]), 1.0)
    lower = np.concatenate(([0.0], c[:-1]))
    overlap = np.maximum(0.0, c - np.maximum(lower, alpha))
    return float(v @ overlap) / (1.0 - alpha)


def discretize_distortion(g: DistortionFunction, m: int) -> DistortionFunction:
    """Knots approximation of g with m uniform pieces, exact at the knots."""
    if m < 1:
        raise DomainError(f"knot count must be >= 1, got {m}")
    grid = np.linspace(0.0, 1.0, m + 1)
    vals = np.asarray(evaluate_distortion(g, grid))
    return DistortionFunction.knots(np.diff(vals))
