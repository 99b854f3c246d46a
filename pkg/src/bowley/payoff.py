"""Payoff-function models and the trainable monotone pricing curve.

A PayoffModel maps either a weather grid (index insurance) or the realized
scalar loss (indemnity insurance) through a small network ending in ReLU,
so payoffs are nonnegative for every input.  Inputs are standardized per
channel (per weather variable, or the loss itself); channels with zero
variance pass through unscaled.

The insurer's flexible pricing curve for the general premium is a
piecewise-linear distortion with softplus-transformed knot increments:
feasible (continuous, nondecreasing, g(0) = 0) at every iterate for any
raw parameter vector.
"""

from dataclasses import dataclass, field

import numpy as np

from . import diffnet
from .choquet import DistortionFunction, DomainError, OutcomeSample

__all__ = [
    "PayoffArch",
    "Normalization",
    "PayoffModel",
    "MonotonePricingCurve",
    "payoff_batch",
    "pricing_curve",
    "softplus",
    "softplus_inverse",
    "sigmoid",
]

MONTHS = 12


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """Preimage of softplus; y must be > 0."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("softplus_inverse requires positive input")
    out = np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))
    return out if out.ndim else float(out)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class PayoffArch:
    """Network architecture choice for a payoff model.

    Defaults follow the validated shapes: MLP hidden (8, 8); CNN with two
    32-channel convolutions, one 2x2 max pool and a 32-unit dense head.
    """

    kind: str = "mlp"
    hidden: tuple = (8, 8)
    conv_channels: tuple = (32, 32)
    dense: tuple = (32,)
    kernel: tuple = (2, 2)
    pool: tuple = (2, 2)


def _build_mlp(n_in: int, hidden, rng) -> diffnet.Network:
    layers = []
    prev = n_in
    for h in hidden:
        layers += [diffnet.Dense(prev, h, rng=rng), diffnet.ReLU()]
        prev = h
    layers += [diffnet.Dense(prev, 1, rng=rng), diffnet.ReLU()]
    return diffnet.Network(layers, (n_in,))


def _build_cnn(rows: int, cols: int, arch: PayoffArch, rng) -> diffnet.Network:
    kh, kw = arch.kernel
    layers = []
    ch = 1
    for c in arch.conv_channels:
        layers += [diffnet.Conv2d(ch, c, kh, kw, rng=rng), diffnet.ReLU()]
        ch = c
    layers += [diffnet.MaxPool(*arch.pool), diffnet.Flatten()]
    net_head = diffnet.Network(layers, (1, rows, cols))
    prev = net_head.output_shape[0]
    for h in arch.dense:
        layers += [diffnet.Dense(prev, h, rng=rng), diffnet.ReLU()]
        prev = h
    layers += [diffnet.Dense(prev, 1, rng=rng), diffnet.ReLU()]
    return diffnet.Network(layers, (1, rows, cols))


@dataclass
class Normalization:
    """Per-channel standardization stats; identity until fitted."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, channels: int) -> "Normalization":
        return cls(mean=np.zeros(channels), std=np.ones(channels))

    @classmethod
    def fit(cls, per_channel_samples: np.ndarray) -> "Normalization":
        """per_channel_samples: (n_obs, channels) observations."""
        mean = per_channel_samples.mean(axis=0)
        std = per_channel_samples.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean=mean, std=std)

    def apply_grid(self, grids: np.ndarray) -> np.ndarray:
        """grids: (n, rows, cols); stats indexed by row channel."""
        return (grids - self.mean[None, :, None]) / self.std[None, :, None]

    def apply_scalar(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[0]) / self.std[0]


class PayoffModel:
    """Differentiable nonnegative payoff map over grids or scalar losses."""

    def __init__(self, input_mode: str, net: diffnet.Network,
                 normalization: Normalization, rows: int = 0, cols: int = MONTHS):
        if input_mode not in ("index", "scalar"):
            raise DomainError(f"input_mode must be 'index' or 'scalar', got {input_mode!r}")
        self.input_mode = input_mode
        self.net = net
        self.normalization = normalization
        self.rows = rows
        self.cols = cols

    @classmethod
    def index_grid(cls, rows: int, arch: PayoffArch, rng, cols: int = MONTHS) -> "PayoffModel":
        if arch.kind == "cnn":
            net = _build_cnn(rows, cols, arch, rng)
        else:
            net = _build_mlp(rows * cols, arch.hidden, rng)
        return cls("index", net, Normalization.identity(rows), rows=rows, cols=cols)

    @classmethod
    def scalar_loss(cls, arch: PayoffArch, rng) -> "PayoffModel":
        return cls("scalar", _build_mlp(1, arch.hidden, rng), Normalization.identity(1))

    def fit_normalization(self, scenarios):
        if self.input_mode == "index":
            w = scenarios.weather
            if w is None:
                raise DomainError("index payoff model needs scenario weather grids")
            # observations per channel pooled over scenarios and months
            obs = w.transpose(0, 2, 1).reshape(-1, w.shape[1])
            self.normalization = Normalization.fit(obs)
        else:
            self.normalization = Normalization.fit(scenarios.losses[:, None])

    def _net_inputs(self, scenarios) -> np.ndarray:
        if self.input_mode == "index":
            w = scenarios.weather
            if w is None:
                raise DomainError("index payoff model needs scenario weather grids")
            if w.shape[1:] != (self.rows, self.cols):
                raise diffnet.ShapeError(
                    f"weather grids {w.shape[1:]} do not match model ({self.rows}, {self.cols})")
            x = self.normalization.apply_grid(w)
            if len(self.net.input_shape) == 3:
                return x[:, None, :, :]
            return x.reshape(x.shape[0], -1)
        return self.normalization.apply_scalar(scenarios.losses)[:, None]

    def evaluate(self, scenarios) -> np.ndarray:
        """Payoff values per scenario; records the tape for backward()."""
        out = self.net.forward(self._net_inputs(scenarios))
        return out[:, 0]

    def backward(self, d_values: np.ndarray):
        """Accumulate parameter gradients for the last evaluate() call."""
        self.net.backward(np.asarray(d_values, dtype=float)[:, None])

    def clone(self) -> "PayoffModel":
        m = PayoffModel(self.input_mode, self.net.clone(),
                        Normalization(self.normalization.mean.copy(),
                                      self.normalization.std.copy()),
                        rows=self.rows, cols=self.cols)
        return m

    def to_state(self) -> dict:
        return {
            "format": diffnet.CHECKPOINT_FORMAT,
            "input_mode": self.input_mode,
            "rows": self.rows,
            "cols": self.cols,
            "normalization": {"mean": self.normalization.mean.tolist(),
                              "std": self.normalization.std.tolist()},
            "net": self.net.to_state(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "PayoffModel":
        norm = Normalization(np.asarray(state["normalization"]["mean"], dtype=float),
                             np.asarray(state["normalization"]["std"], dtype=float))
        return cls(state["input_mode"], diffnet.network_from_state(state["net"]),
                   norm, rows=state["rows"], cols=state["cols"])


def payoff_batch(model: PayoffModel, scenarios) -> OutcomeSample:
    """Evaluate the model on every scenario; payoffs carry scenario probs."""
    return OutcomeSample(model.evaluate(scenarios), scenarios.probs)


@dataclass
class MonotonePricingCurve:
    """Knot-increment pricing curve, feasible by construction.

    raw_increments are unconstrained reals; the derived distortion uses
    softplus(raw) >= 0 as increments, so g(0) = 0 and g nondecreasing hold
    for any parameter value during training.
    """

    raw_increments: np.ndarray

    def __init__(self, raw_increments):
        self.raw_increments = np.asarray(raw_increments, dtype=float).copy()
        if self.raw_increments.ndim != 1 or self.raw_increments.size == 0:
            raise DomainError("raw_increments must be a nonempty 1-d vector")

    @classmethod
    def linear(cls, scale: float, m: int) -> "MonotonePricingCurve":
        """Curve whose derived distortion is g(s) = scale * s on m knots."""
        if scale <= 0:
            raise DomainError("linear curve scale must be > 0")
        return cls(np.full(m, softplus_inverse(scale / m)))

    @classmethod
    def identity(cls, m: int) -> "MonotonePricingCurve":
        return cls.linear(1.0, m)

    @property
    def m(self) -> int:
        return self.raw_increments.size

    def increments(self) -> np.ndarray:
        return softplus(self.raw_increments)

    def increment_jacobian(self) -> np.ndarray:
        """d increments / d raw, the softplus slope per knot."""
        return sigmoid(self.raw_increments)

    def distortion(self) -> DistortionFunction:
        return DistortionFunction.knots(self.increments())


def pricing_curve(curve: MonotonePricingCurve) -> DistortionFunction:
    """The knots distortion derived from the curve's raw parameters."""
    return curve.distortion()
