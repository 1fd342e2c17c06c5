"""Flat-parameter MLP engine with exact reverse-mode gradients.

All four networks in this project (actor, critic, discriminator, reward
model) are small fully-connected ReLU nets, so a hand-rolled engine over a
single flat numpy parameter vector keeps checkpoints, SGD steps and
finite-difference gradient checks trivially exact.

Parameter layout: for each layer i, the weight matrix W_i with shape
(fan_in, fan_out) stored row-major, followed by the bias b_i.  Forward is
``x @ W + b`` with ReLU between hidden layers.  The subgradient of ReLU at
exactly zero is taken to be zero.

Output transforms:
  identity  -- raw last-layer affine output
  logistic  -- elementwise sigmoid, output in (0, 1)
  tanh_box  -- affine tanh squash into the box (out_low, out_high)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

OUTPUT_TRANSFORMS = ("identity", "logistic", "tanh_box")


@dataclass(frozen=True, eq=False)
class MlpModel:
    layer_sizes: tuple[int, ...]
    params: np.ndarray
    activation: str = "relu"
    output_transform: str = "identity"
    out_low: np.ndarray | None = None
    out_high: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class GradBundle:
    """Result of one reverse pass: outputs, d/d(params), d/d(input)."""

    value: np.ndarray
    grad: np.ndarray
    input_grad: np.ndarray


def param_count(layer_sizes) -> int:
    return sum(
        (layer_sizes[i] + 1) * layer_sizes[i + 1] for i in range(len(layer_sizes) - 1)
    )


def init_model(
    layer_sizes,
    *,
    seed,
    output_transform: str = "identity",
    out_low=None,
    out_high=None,
    zero_last_layer: bool = False,
) -> MlpModel:
    """Glorot-uniform weights, zero biases, fully seeded.

    ``zero_last_layer`` zeroes the final affine layer so a fresh model emits
    exactly the transform of 0 (e.g. logistic 0.5) regardless of input.
    """
    layer_sizes = tuple(int(n) for n in layer_sizes)
    if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
        raise ValueError(f"need at least in/out layer sizes, all positive: {layer_sizes}")
    if output_transform not in OUTPUT_TRANSFORMS:
        raise ValueError(f"unknown output transform {output_transform!r}")
    rng = np.random.default_rng(seed)
    chunks = []
    n_layers = len(layer_sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if zero_last_layer and i == n_layers - 1:
            w = np.zeros_like(w)
        chunks.append(w.ravel())
        chunks.append(np.zeros(fan_out))
    low = None if out_low is None else np.asarray(out_low, dtype=float)
    high = None if out_high is None else np.asarray(out_high, dtype=float)
    if output_transform == "tanh_box" and (low is None or high is None):
        raise ValueError("tanh_box requires out_low and out_high")
    return MlpModel(
        layer_sizes=layer_sizes,
        params=np.concatenate(chunks),
        output_transform=output_transform,
        out_low=low,
        out_high=high,
    )


def _layers(model: MlpModel):
    """Views of (W, b) per layer into the flat parameter vector."""
    sizes = model.layer_sizes
    p = model.params
    out = []
    off = 0
    for i in range(len(sizes) - 1):
        fi, fo = sizes[i], sizes[i + 1]
        w = p[off : off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = p[off : off + fo]
        off += fo
        out.append((w, b))
    return out


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _transform(model: MlpModel, z):
    if model.output_transform == "identity":
        return z
    if model.output_transform == "logistic":
        return _sigmoid(z)
    mid = (model.out_low + model.out_high) / 2.0
    half = (model.out_high - model.out_low) / 2.0
    return mid + half * np.tanh(z)


def _transform_backward(model: MlpModel, z, upstream):
    """Chain the upstream through the output transform: returns d/d(z)."""
    if model.output_transform == "identity":
        return upstream
    if model.output_transform == "logistic":
        y = _sigmoid(z)
        return upstream * y * (1.0 - y)
    half = (model.out_high - model.out_low) / 2.0
    t = np.tanh(z)
    return upstream * half * (1.0 - t * t)


def _as_batch(x, width, what):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ValueError(f"{what} has shape {np.asarray(x).shape}, expected (_, {width})")
    return x, single


def forward(model: MlpModel, x, transform: bool = True) -> np.ndarray:
    """Feed-forward evaluation; accepts a single vector or an (n, d) batch."""
    xb, single = _as_batch(x, model.layer_sizes[0], "input")
    layers = _layers(model)
    act = xb
    for i, (w, b) in enumerate(layers):
        z = act @ w + b
        act = np.maximum(z, 0.0) if i < len(layers) - 1 else z
    out = _transform(model, act) if transform else act
    return out[0] if single else out


def backward(model: MlpModel, x, upstream, transform: bool = True) -> GradBundle:
    """Exact gradient of <upstream, output> w.r.t. params and input.

    For a batch, gradients of the per-row inner products are summed into a
    single flat `grad`; `input_grad` stays per-row.  With ``transform=False``
    the upstream is applied to the raw pre-transform output (useful for
    numerically stable log-sigmoid losses).
    """
    xb, single = _as_batch(x, model.layer_sizes[0], "input")
    ub, _ = _as_batch(upstream, model.layer_sizes[-1], "upstream")
    if ub.shape[0] != xb.shape[0]:
        raise ValueError(f"upstream batch {ub.shape[0]} != input batch {xb.shape[0]}")
    layers = _layers(model)

    pre = []
    acts = [xb]
    act = xb
    for i, (w, b) in enumerate(layers):
        z = act @ w + b
        pre.append(z)
        act = np.maximum(z, 0.0) if i < len(layers) - 1 else z
        acts.append(act)

    raw = pre[-1]
    value = _transform(model, raw) if transform else raw
    delta = _transform_backward(model, raw, ub) if transform else ub

    grad = np.zeros_like(model.params)
    goff = grad.size
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        fi, fo = w.shape
        dw = acts[i].T @ delta
        db = delta.sum(axis=0)
        goff -= fo
        grad[goff : goff + fo] = db
        goff -= fi * fo
        grad[goff : goff + fi * fo] = dw.ravel()
        delta = delta @ w.T
        if i > 0:
            delta = delta * (pre[i - 1] > 0.0)
    input_grad = delta

    if single:
        value = value[0]
        input_grad = input_grad[0]
    return GradBundle(value=value, grad=grad, input_grad=input_grad)


def sgd_step(model: MlpModel, grad, learning_rate: float, direction: str = "descend") -> MlpModel:
    """One plain SGD step, returning the updated model."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != model.params.shape:
        raise ValueError(f"gradient shape {grad.shape} != params {model.params.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient: step rejected")
    if learning_rate < 0:
        raise ValueError("learning rate must be >= 0")
    if direction == "descend":
        new = model.params - learning_rate * grad
    elif direction == "ascend":
        new = model.params + learning_rate * grad
    else:
        raise ValueError(f"direction must be ascend/descend, got {direction!r}")
    return replace(model, params=new)


def save_model(model: MlpModel, path) -> None:
    """JSON checkpoint; float lists round-trip bit-exactly via repr."""
    doc = {
        "layer_sizes": list(model.layer_sizes),
        "activation": model.activation,
        "output_transform": model.output_transform,
        "out_low": None if model.out_low is None else model.out_low.tolist(),
        "out_high": None if model.out_high is None else model.out_high.tolist(),
        "params": model.params.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        doc = json.load(fh)
    return MlpModel(
        layer_sizes=tuple(doc["layer_sizes"]),
        params=np.asarray(doc["params"], dtype=float),
        activation=doc["activation"],
        output_transform=doc["output_transform"],
        out_low=None if doc["out_low"] is None else np.asarray(doc["out_low"], dtype=float),
        out_high=None if doc["out_high"] is None else np.asarray(doc["out_high"], dtype=float),
    )
