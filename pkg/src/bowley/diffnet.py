"""Minimal reverse-mode network engine: dense, 2-d convolution, max pooling.

Small, deterministic and numpy-only.  Layers operate on batched arrays
(leading batch axis); Network.forward also accepts a single unbatched
input and returns an unbatched output.  A forward pass records the tape
(per-layer caches); backward() accumulates parameter gradients in place,
sgd_step() applies them and clears.

Supported layers: Dense, Conv2d (valid, stride 1), MaxPool (non-
overlapping, floor mode: trailing rows/columns that do not fill a window
are ignored), Flatten, ReLU.  The ReLU subgradient at 0 is 0.
"""

import json
import math

import numpy as np

__all__ = [
    "ShapeError",
    "StateError",
    "Dense",
    "Conv2d",
    "MaxPool",
    "Flatten",
    "ReLU",
    "Network",
    "network_from_state",
    "save_checkpoint",
    "load_checkpoint",
    "kink_margin",
]

CHECKPOINT_FORMAT = 1


class ShapeError(ValueError):
    """Tensor shapes do not chain through the declared layers."""


class StateError(RuntimeError):
    """Operation called out of order (e.g. backward before forward)."""


def _glorot(rng, shape, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class Dense:
    """y = x @ W.T + b with W of shape (n_out, n_in)."""

    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, weight=None, bias=None):
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weight = _glorot(rng, (self.n_out, self.n_in), self.n_in, self.n_out)
        self.weight = np.asarray(weight, dtype=float).reshape(self.n_out, self.n_in)
        self.bias = (np.zeros(self.n_out) if bias is None
                     else np.asarray(bias, dtype=float).reshape(self.n_out))
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ShapeError(f"dense expects ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def forward(self, x):
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, dout):
        self.grad_weight += dout.T @ self._x
        self.grad_bias += dout.sum(axis=0)
        return dout @ self.weight

    def parameters(self):
        yield "weight", self.weight, self.grad_weight
        yield "bias", self.bias, self.grad_bias


class Conv2d:
    """Valid-mode, stride-1 2-d convolution; weight (out_ch, in_ch, kh, kw)."""

    kind = "conv2d"

    def __init__(self, in_ch, out_ch, kh, kw, rng=None, weight=None, bias=None):
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kh, self.kw = int(kh), int(kw)
        shape = (self.out_ch, self.in_ch, self.kh, self.kw)
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            fan = self.in_ch * self.kh * self.kw
            weight = _glorot(rng, shape, fan, self.out_ch * self.kh * self.kw)
        self.weight = np.asarray(weight, dtype=float).reshape(shape)
        self.bias = (np.zeros(self.out_ch) if bias is None
                     else np.asarray(bias, dtype=float).reshape(self.out_ch))
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._windows = None
        self._in_shape = None

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"conv2d expects ({self.in_ch}, H, W), got {in_shape}")
        h, w = in_shape[1] - self.kh + 1, in_shape[2] - self.kw + 1
        if h < 1 or w < 1:
            raise ShapeError(f"conv2d kernel {(self.kh, self.kw)} larger than input {in_shape}")
        return (self.out_ch, h, w)

    def forward(self, x):
        self._in_shape = x.shape
        self._windows = np.lib.stride_tricks.sliding_window_view(
            x, (self.kh, self.kw), axis=(2, 3))
        out = np.einsum("bcijuv,ocuv->boij", self._windows, self.weight)
        return out + self.bias[None, :, None, None]

    def backward(self, dout):
        self.grad_weight += np.einsum("bcijuv,boij->ocuv", self._windows, dout)
        self.grad_bias += dout.sum(axis=(0, 2, 3))
        dx = np.zeros(self._in_shape)
        hh, ww = dout.shape[2], dout.shape[3]
        for u in range(self.kh):
            for v in range(self.kw):
                dx[:, :, u:u + hh, v:v + ww] += np.einsum(
                    "boij,oc->bcij", dout, self.weight[:, :, u, v])
        return dx

    def parameters(self):
        yield "weight", self.weight, self.grad_weight
        yield "bias", self.bias, self.grad_bias


class MaxPool:
    """Non-overlapping max pooling with window (ph, pw), floor mode."""

    kind = "maxpool"

    def __init__(self, ph, pw):
        self.ph, self.pw = int(ph), int(pw)
        self._idx = None
        self._in_shape = None
        self._windows = None

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        h2, w2 = h // self.ph, w // self.pw
        if h2 < 1 or w2 < 1:
            raise ShapeError(f"maxpool window {(self.ph, self.pw)} larger than input {in_shape}")
        return (c, h2, w2)

    def _window_view(self, x):
        b, c, h, w = x.shape
        h2, w2 = h // self.ph, w // self.pw
        crop = x[:, :, :h2 * self.ph, :w2 * self.pw]
        r = crop.reshape(b, c, h2, self.ph, w2, self.pw)
        return r.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, self.ph * self.pw)

    def forward(self, x):
        self._in_shape = x.shape
        windows = self._window_view(x)
        self._windows = windows
        self._idx = np.argmax(windows, axis=-1)
        return np.take_along_axis(windows, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        b, c, h, w = self._in_shape
        h2, w2 = h // self.ph, w // self.pw
        flat = np.zeros((b, c, h2, w2, self.ph * self.pw))
        np.put_along_axis(flat, self._idx[..., None], dout[..., None], axis=-1)
        crop = flat.reshape(b, c, h2, w2, self.ph, self.pw).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(self._in_shape)
        dx[:, :, :h2 * self.ph, :w2 * self.pw] = crop.reshape(b, c, h2 * self.ph, w2 * self.pw)
        return dx

    def parameters(self):
        return iter(())


class Flatten:
    kind = "flatten"

    def __init__(self):
        self._in_shape = None

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._in_shape)

    def parameters(self):
        return iter(())


class ReLU:
    kind = "relu"

    def __init__(self):
        self._x = None

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        self._x = x
        return np.maximum(x, 0.0)

    def backward(self, dout):
        return dout * (self._x > 0.0)

    def parameters(self):
        return iter(())


_LAYER_KINDS = {c.kind: c for c in (Dense, Conv2d, MaxPool, Flatten, ReLU)}


class Network:
    """An ordered layer pipeline with a fixed input shape.

    Shape consistency is checked at construction; forward() re-checks the
    input and names the offending layer on mismatch.  A Network instance is
    single-threaded during forward/backward (the tape is mutable state);
    clones are independent.
    """

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        shape = self.input_shape
        self.layer_shapes = [shape]
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
            self.layer_shapes.append(shape)
        self.output_shape = shape
        self._forward_done = False
        self._was_batched = False

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape == self.input_shape:
            x = x[None, ...]
            self._was_batched = False
        elif x.ndim >= 1 and x.shape[1:] == self.input_shape:
            self._was_batched = True
        else:
            raise ShapeError(
                f"input shape {x.shape} does not match network input {self.input_shape}")
        for layer in self.layers:
            x = layer.forward(x)
        self._forward_done = True
        return x if self._was_batched else x[0]

    def backward(self, upstream):
        """Accumulate parameter gradients; returns the input gradient."""
        if not self._forward_done:
            raise StateError("backward called before forward")
        g = np.asarray(upstream, dtype=float)
        if not self._was_batched:
            g = g[None, ...]
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g if self._was_batched else g[0]

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, param, grad in layer.parameters():
                yield f"{i}.{name}", param, grad

    def zero_grad(self):
        for _, _, grad in self.parameters():
            grad[...] = 0.0

    def sgd_step(self, lr: float):
        """p <- p - lr * grad for every parameter; gradients are cleared."""
        for _, param, grad in self.parameters():
            param -= lr * grad
            grad[...] = 0.0

    def num_parameters(self) -> int:
        return sum(p.size for _, p, _ in self.parameters())

    def clone(self) -> "Network":
        return network_from_state(self.to_state())

    def copy_weights_from(self, other: "Network"):
        mine = list(self.parameters())
        theirs = list(other.parameters())
        if [n for n, _, _ in mine] != [n for n, _, _ in theirs]:
            raise ShapeError("cannot copy weights between different architectures")
        for (_, p, g), (_, q, _) in zip(mine, theirs):
            if p.shape != q.shape:
                raise ShapeError("cannot copy weights between different architectures")
            p[...] = q
            g[...] = 0.0

    # -- checkpointing ------------------------------------------------

    def to_state(self) -> dict:
        layers = []
        for layer in self.layers:
            entry = {"kind": layer.kind}
            if layer.kind == "dense":
                entry.update(n_in=layer.n_in, n_out=layer.n_out)
            elif layer.kind == "conv2d":
                entry.update(in_ch=layer.in_ch, out_ch=layer.out_ch,
                             kh=layer.kh, kw=layer.kw)
            elif layer.kind == "maxpool":
                entry.update(ph=layer.ph, pw=layer.pw)
            for name, param, _ in layer.parameters():
                entry[name] = {"shape": list(param.shape), "data": param.ravel().tolist()}
            layers.append(entry)
        return {"format": CHECKPOINT_FORMAT,
                "input_shape": list(self.input_shape),
                "layers": layers}


def _array_from_state(tagged):
    arr = np.asarray(tagged["data"], dtype=float).reshape(tagged["shape"])
    return arr


def network_from_state(state: dict) -> Network:
    if state.get("format") != CHECKPOINT_FORMAT:
        raise StateError(f"unsupported checkpoint format {state.get('format')!r}")
    layers = []
    for entry in state["layers"]:
        kind = entry["kind"]
        if kind == "dense":
            layers.append(Dense(entry["n_in"], entry["n_out"],
                                weight=_array_from_state(entry["weight"]),
                                bias=_array_from_state(entry["bias"])))
        elif kind == "conv2d":
            layers.append(Conv2d(entry["in_ch"], entry["out_ch"], entry["kh"], entry["kw"],
                                 weight=_array_from_state(entry["weight"]),
                                 bias=_array_from_state(entry["bias"])))
        elif kind == "maxpool":
            layers.append(MaxPool(entry["ph"], entry["pw"]))
        elif kind in _LAYER_KINDS:
            layers.append(_LAYER_KINDS[kind]())
        else:
            raise StateError(f"unknown layer kind {kind!r} in checkpoint")
    return Network(layers, state["input_shape"])


def save_checkpoint(net: Network, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(net.to_state(), f)


def load_checkpoint(path) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        return network_from_state(json.load(f))


def kink_margin(net: Network) -> float:
    """Distance of the last forward pass to the nearest nonsmooth decision.

    The minimum over ReLU layers of min |pre-activation| and over MaxPool
    layers of the smallest winner-vs-runner-up window gap.  Finite-difference
    gradient checks use this to skip inputs too close to a kink.
    """
    if not net._forward_done:
        raise StateError("kink_margin requires a completed forward pass")
    margin = np.inf
    for layer in net.layers:
        if layer.kind == "relu":
            margin = min(margin, float(np.abs(layer._x).min()))
        elif layer.kind == "maxpool" and layer._windows.shape[-1] > 1:
            top2 = np.partition(layer._windows, -2, axis=-1)[..., -2:]
            margin = min(margin, float((top2[..., 1] - top2[..., 0]).min()))
    return margin
