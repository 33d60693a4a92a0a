"""Layer specifications and their parameterized implementations.

Feature maps are channels-last (N, H, W, C).  Every layer is built from a
:class:`LayerSpec` plus a ``numpy.random.Generator``; initialization is
fan-in scaled uniform for dense/conv weights, ones/zeros for batch norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor, NumericFault, ShapeError

LAYER_KINDS = ("dense", "conv2d", "batch_norm", "relu", "tanh", "residual_block",
               "lstm_cell", "flatten", "concat")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_features: int = 0
    out_features: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 3
    stride: int = 1
    padding: int = 0
    num_features: int = 0
    hidden_size: int = 0
    bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v not in (0, None)}
        d["kind"] = self.kind
        return d


def dense(i: int, o: int, bias: bool = True) -> LayerSpec:
    return LayerSpec("dense", in_features=i, out_features=o, bias=bias)


def conv(cin: int, cout: int, k: int = 3, stride: int = 1, padding: int | None = None) -> LayerSpec:
    return LayerSpec("conv2d", in_channels=cin, out_channels=cout, kernel_size=k, stride=stride,
                     padding=k // 2 if padding is None else padding)


def batch_norm(n: int) -> LayerSpec:
    return LayerSpec("batch_norm", num_features=n)


def residual_block(cin: int, cout: int, stride: int = 1) -> LayerSpec:
    return LayerSpec("residual_block", in_channels=cin, out_channels=cout, stride=stride)


def lstm_cell(i: int, h: int) -> LayerSpec:
    return LayerSpec("lstm_cell", in_features=i, hidden_size=h)


RELU = LayerSpec("relu")
TANH = LayerSpec("tanh")
FLATTEN = LayerSpec("flatten")
CONCAT = LayerSpec("concat")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    spec: LayerSpec

    def __init__(self, spec: LayerSpec | None):
        self.spec = spec
        self.training = True

    @property
    def kind(self) -> str:
        return self.spec.kind if self.spec is not None else type(self).__name__.lower()

    def params(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def children(self) -> dict[str, "Layer"]:
        return {}

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self.params().items():
            yield prefix + name, p
        for cname, child in self.children().items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self.buffers().items():
            yield prefix + name, b
        for cname, child in self.children().items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def set_mode(self, training: bool) -> None:
        self.training = training
        for child in self.children().values():
            child.set_mode(training)

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        super().__init__(spec)
        self.weight = Tensor(_uniform(rng, (spec.in_features, spec.out_features), spec.in_features),
                             requires_grad=True)
        self.bias = (Tensor(_uniform(rng, (spec.out_features,), spec.in_features), requires_grad=True)
                     if spec.bias else None)

    def params(self):
        return {"weight": self.weight} if self.bias is None else {"weight": self.weight, "bias": self.bias}

    def output_shape(self, in_shape):
        if in_shape[-1] != self.spec.in_features:
            raise ShapeError(f"dense expects {self.spec.in_features} features, got {in_shape[-1]}")
        return (*in_shape[:-1], self.spec.out_features)

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv2d(Layer):
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        super().__init__(spec)
        k = spec.kernel_size
        fan_in = k * k * spec.in_channels
        self.weight = Tensor(_uniform(rng, (k, k, spec.in_channels, spec.out_channels), fan_in),
                             requires_grad=True)
        self.bias = (Tensor(_uniform(rng, (spec.out_channels,), fan_in), requires_grad=True)
                     if spec.bias else None)

    def params(self):
        return {"weight": self.weight} if self.bias is None else {"weight": self.weight, "bias": self.bias}

    def output_shape(self, in_shape):
        n, h, w, c = in_shape
        if c != self.spec.in_channels:
            raise ShapeError(f"conv2d expects {self.spec.in_channels} channels, got {c}")
        s, k, p = self.spec.stride, self.spec.kernel_size, self.spec.padding
        return (n, T.conv_output_size(h, k, s, p), T.conv_output_size(w, k, s, p), self.spec.out_channels)

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)


class BatchNorm(Layer):
    """Batch statistics in train mode, running statistics in eval mode."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator | None = None):
        super().__init__(spec)
        n = spec.num_features
        self.gamma = Tensor(np.ones(n), requires_grad=True)
        self.beta = Tensor(np.zeros(n), requires_grad=True)
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def output_shape(self, in_shape):
        if in_shape[-1] != self.spec.num_features:
            raise ShapeError(f"batch_norm expects {self.spec.num_features} features, got {in_shape[-1]}")
        return in_shape

    def forward(self, x):
        if x.shape[-1] != self.spec.num_features:
            raise ShapeError(f"batch_norm expects {self.spec.num_features} features, got {x.shape[-1]}")
        if not self.training:
            return T.batch_norm_eval(x, self.gamma, self.beta, self.running_mean, self.running_var, BN_EPS)
        out, mu, var = T.batch_norm_train(x, self.gamma, self.beta, BN_EPS)
        # in place so references handed out by buffers() stay valid
        self.running_mean *= 1.0 - BN_MOMENTUM
        self.running_mean += BN_MOMENTUM * mu
        self.running_var *= 1.0 - BN_MOMENTUM
        self.running_var += BN_MOMENTUM * var
        return out


class ReLU(Layer):
    def forward(self, x):
        return T.relu(x)


class Tanh(Layer):
    def forward(self, x):
        return T.tanh(x)


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (in_shape[0], int(np.prod(in_shape[1:])))

    def forward(self, x):
        return T.reshape(x, (x.shape[0], -1))


class Concat(Layer):
    """Concatenates a tuple of inputs along the last axis."""

    def forward(self, xs):
        return T.concat(list(xs), axis=-1)


class ResidualBlock(Layer):
    """conv3x3-BN-ReLU-conv3x3-BN, identity or 1x1-projected skip, then ReLU."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        super().__init__(spec)
        cin, cout, s = spec.in_channels, spec.out_channels, spec.stride
        self.conv1 = Conv2d(conv(cin, cout, 3, s), rng)
        self.bn1 = BatchNorm(batch_norm(cout))
        self.conv2 = Conv2d(conv(cout, cout, 3, 1), rng)
        self.bn2 = BatchNorm(batch_norm(cout))
        if s != 1 or cin != cout:
            self.proj = Conv2d(conv(cin, cout, 1, s, 0), rng)
            self.proj_bn = BatchNorm(batch_norm(cout))
        else:
            self.proj = None
            self.proj_bn = None

    def children(self):
        out = {"conv1": self.conv1, "bn1": self.bn1, "conv2": self.conv2, "bn2": self.bn2}
        if self.proj is not None:
            out["proj"] = self.proj
            out["proj_bn"] = self.proj_bn
        return out

    def output_shape(self, in_shape):
        return self.conv1.output_shape(in_shape)

    def forward(self, x):
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = x if self.proj is None else self.proj_bn(self.proj(x))
        return T.relu(T.add(h, skip))


class LSTMCell(Layer):
    """Single LSTM step; gate order input, forget, candidate, output."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        super().__init__(spec)
        i, h = spec.in_features, spec.hidden_size
        fan_in = i + h
        self.w_x = Tensor(_uniform(rng, (i, 4 * h), fan_in), requires_grad=True)
        self.w_h = Tensor(_uniform(rng, (h, 4 * h), fan_in), requires_grad=True)
        b = _uniform(rng, (4 * h,), fan_in)
        b[h:2 * h] += 1.0
        self.bias = Tensor(b, requires_grad=True)

    def params(self):
        return {"w_x": self.w_x, "w_h": self.w_h, "bias": self.bias}

    def initial_state(self, batch: int) -> tuple[Tensor, Tensor]:
        hsz = self.spec.hidden_size
        return Tensor(np.zeros((batch, hsz))), Tensor(np.zeros((batch, hsz)))

    def forward(self, inputs):
        x, (h, c) = inputs
        if x.shape[-1] != self.spec.in_features:
            raise ShapeError(f"lstm_cell expects {self.spec.in_features} features, got {x.shape[-1]}")
        hs = self.spec.hidden_size
        z = T.add(T.add(T.matmul(x, self.w_x), T.matmul(h, self.w_h)), self.bias)
        i = T.sigmoid(z[:, :hs])
        f = T.sigmoid(z[:, hs:2 * hs])
        g = T.tanh(z[:, 2 * hs:3 * hs])
        o = T.sigmoid(z[:, 3 * hs:])
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new

    def unroll(self, xs: Sequence[Tensor], state=None) -> list[Tensor]:
        """Apply the cell over a time-ordered sequence of (B, I) inputs; returns hidden states."""
        if state is None:
            state = self.initial_state(xs[0].shape[0])
        hs = []
        for x in xs:
            state = self.forward((x, state))
            hs.append(state[0])
        return hs


_BUILDERS = {
    "dense": Dense, "conv2d": Conv2d, "batch_norm": BatchNorm, "relu": ReLU, "tanh": Tanh,
    "residual_block": ResidualBlock, "lstm_cell": LSTMCell, "flatten": Flatten, "concat": Concat,
}


def build_layer(spec: LayerSpec, rng: np.random.Generator) -> Layer:
    cls = _BUILDERS[spec.kind]
    if cls in (ReLU, Tanh, Flatten, Concat):
        return cls(spec)
    return cls(spec, rng)


class Sequential(Layer):
    def __init__(self, specs: Sequence[LayerSpec], rng: np.random.Generator):
        super().__init__(None)
        self.specs = list(specs)
        self.layers = [build_layer(s, rng) for s in self.specs]

    def children(self):
        return {str(i): layer for i, layer in enumerate(self.layers)}

    def output_shape(self, in_shape):
        shape = in_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x):
        return forward(self.layers, x)


def _check_finite(out, index: int, kind: str) -> None:
    arrays = [t.data for t in out] if isinstance(out, tuple) else [out.data]
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericFault(f"non-finite activation after layer {index} ({kind})", index)


def forward(layers: Sequence[Layer], x, mode: str | None = None):
    """Run ``x`` through ``layers`` in order.

    ``mode`` ("train" or "eval") switches batch-norm behaviour for every
    layer first; ``None`` keeps the layers' current modes.
    """
    if mode is not None:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        for layer in layers:
            layer.set_mode(mode == "train")
    if layers and isinstance(x, Tensor):
        layers[0].output_shape(x.shape)  # raises ShapeError on mismatch
    for idx, layer in enumerate(layers):
        x = layer(x)
        _check_finite(x, idx, layer.kind)
    return x


def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    """Backpropagate a scalar loss; listed parameters not reached get zero grads."""
    loss.backward()
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
