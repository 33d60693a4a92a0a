"""Central finite-difference gradient checks for tensors and layers.

The error reported for one instance is normwise: the largest absolute
difference between analytic and numeric gradients, divided by the largest
gradient magnitude over all checked leaves.  An elementwise ratio is
dominated by near-zero components where both gradients are at round-off
level.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .layers import (CONCAT, FLATTEN, RELU, TANH, BatchNorm, build_layer, batch_norm, conv, dense, lstm_cell,
                     residual_block)
from .tensor import Tensor, no_grad

STEP = 1e-5
TOLERANCE = 1e-4


def _outputs(out) -> tuple[Tensor, ...]:
    return tuple(out) if isinstance(out, (tuple, list)) else (out,)


def gradcheck(fn: Callable[[], Tensor | tuple], leaves: Sequence[Tensor], rng: np.random.Generator,
              h: float = STEP) -> float:
    """Compare backprop against central differences of a random projection of ``fn()``."""
    outs = _outputs(fn())
    proj = [rng.normal(size=o.shape) for o in outs]

    def value() -> float:
        with no_grad():
            return float(sum((o.data * r).sum() for o, r in zip(_outputs(fn()), proj)))

    for leaf in leaves:
        leaf.grad = None
    outs = _outputs(fn())
    loss = T.tsum(T.mul(outs[0], Tensor(proj[0])))
    for o, r in zip(outs[1:], proj[1:]):
        loss = T.add(loss, T.tsum(T.mul(o, Tensor(r))))
    loss.backward()

    worst, scale = 0.0, 0.0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        numeric = np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = value()
            flat[i] = keep - h
            down = value()
            flat[i] = keep
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        worst = max(worst, float(np.max(np.abs(analytic - numeric), initial=0.0)))
        scale = max(scale, float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    return worst / max(scale, 1e-12)


def _away_from_zero(rng, shape, gap=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap * 10, x)


def layer_instance(kind: str, rng: np.random.Generator):
    """A random small instance of one layer kind: (fn, leaves)."""
    b = int(rng.integers(2, 5))
    if kind == "dense":
        layer = build_layer(dense(int(rng.integers(2, 7)), int(rng.integers(1, 6))), rng)
        x = Tensor(rng.normal(size=(b, layer.spec.in_features)), requires_grad=True)
        return (lambda: layer(x)), [x, *layer.parameters()]
    if kind == "conv2d":
        k = int(rng.choice([1, 3]))
        spec = conv(int(rng.integers(1, 4)), int(rng.integers(1, 4)), k, int(rng.integers(1, 3)))
        layer = build_layer(spec, rng)
        s = int(rng.integers(4, 7))
        x = Tensor(rng.normal(size=(b, s, s, spec.in_channels)), requires_grad=True)
        return (lambda: layer(x)), [x, *layer.parameters()]
    if kind == "batch_norm":
        n = int(rng.integers(1, 6))
        layer = BatchNorm(batch_norm(n))
        layer.gamma.data[...] = rng.uniform(0.5, 1.5, n)
        layer.beta.data[...] = rng.normal(size=n)
        shape = (b + 2, n) if rng.random() < 0.5 else (b, 3, 3, n)
        x = Tensor(rng.normal(size=shape) * rng.uniform(0.5, 3.0) + rng.normal(), requires_grad=True)
        return (lambda: layer(x)), [x, *layer.parameters()]
    if kind in ("relu", "tanh", "flatten"):
        layer = build_layer({"relu": RELU, "tanh": TANH, "flatten": FLATTEN}[kind], rng)
        x = Tensor(_away_from_zero(rng, (b, 3, int(rng.integers(1, 4)))), requires_grad=True)
        return (lambda: layer(x)), [x]
    if kind == "concat":
        layer = build_layer(CONCAT, rng)
        xs = [Tensor(rng.normal(size=(b, int(rng.integers(1, 5)))), requires_grad=True)
              for _ in range(int(rng.integers(2, 4)))]
        return (lambda: layer(tuple(xs))), xs
    if kind == "residual_block":
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        layer = build_layer(residual_block(cin, cout, int(rng.integers(1, 3))), rng)
        x = Tensor(rng.normal(size=(b, 5, 5, cin)), requires_grad=True)
        return (lambda: layer(x)), [x, *layer.parameters()]
    if kind == "lstm_cell":
        i, hsz = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        layer = build_layer(lstm_cell(i, hsz), rng)
        x = Tensor(rng.normal(size=(b, i)), requires_grad=True)
        h0 = Tensor(rng.normal(size=(b, hsz)) * 0.5, requires_grad=True)
        c0 = Tensor(rng.normal(size=(b, hsz)) * 0.5, requires_grad=True)
        return (lambda: layer((x, (h0, c0)))), [x, h0, c0, *layer.parameters()]
    raise ValueError(f"unknown layer kind {kind!r}")


def check_layer_kind(kind: str, instances: int = 20, seed: int = 0, h: float = STEP) -> list[float]:
    """Relative errors of ``instances`` random instances of one layer kind."""
    errors = []
    for k in range(instances):
        rng = np.random.default_rng([seed, k])
        fn, leaves = layer_instance(kind, rng)
        errors.append(gradcheck(fn, leaves, rng, h))
    return errors
