"""Small feed-forward classifiers with hand-written reverse-mode gradients.

Everything numeric runs in float64. Weight files store float32, so a model
only round-trips exactly once its parameters are float32-representable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WEIGHT_MAGIC = b"SAMW"
WEIGHT_VERSION = 1
KIND_LINEAR, KIND_RELU = 0, 1


class WeightFileError(ValueError):
    pass


# ---------------------------------------------------------------- numerics


def logsumexp(values, axis=-1):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("logsumexp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    # exact for a single element: log(exp(0)) is 0, so out == m
    return np.squeeze(out, axis=axis) if out.ndim > 1 else out[0]


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


# ------------------------------------------------------------------ layers


@dataclass(frozen=True)
class Linear:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"bad linear shapes: weight {w.shape}, bias {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite parameters")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Classifier:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        linears = [layer for layer in layers if isinstance(layer, Linear)]
        if not linears or not isinstance(layers[-1], Linear):
            raise ValueError("a classifier must end with a linear layer")
        for a, b in zip(linears, linears[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not compose: {a.out_dim} -> {b.in_dim}")

    @property
    def input_dim(self) -> int:
        return next(layer for layer in self.layers if isinstance(layer, Linear)).in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def linears(self):
        return [layer for layer in self.layers if isinstance(layer, Linear)]

    def replace_params(self, params) -> Classifier:
        """New classifier with the same architecture and (weight, bias) pairs from ``params``."""
        it = iter(params)
        layers = []
        for layer in self.layers:
            if isinstance(layer, Linear):
                w, b = next(it)
                layers.append(Linear(w, b))
            else:
                layers.append(layer)
        return Classifier(tuple(layers))

    def params(self):
        return [(layer.weight, layer.bias) for layer in self.linears()]


def mlp(input_dim: int, hidden, num_classes: int, rng=None, scale: str = "he") -> Classifier:
    """Random linear/ReLU stack. ``hidden`` lists the hidden widths."""
    rng = np.random.default_rng(rng)
    dims = [input_dim, *hidden, num_classes]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        std = np.sqrt(2.0 / d_in) if scale == "he" else 1.0
        layers.append(Linear(rng.normal(0.0, std, size=(d_out, d_in)), np.zeros(d_out)))
        if i < len(dims) - 2:
            layers.append(ReLU())
    return Classifier(tuple(layers))


# -------------------------------------------------------- forward/backward


def _check_input(model: Classifier, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input has dim {x.shape[-1]}, model expects {model.input_dim}")
    return x


def forward_trace(model: Classifier, x):
    """Forward pass keeping every layer input, for the backward pass."""
    x = _check_input(model, x)
    trace = [x]
    h = x
    for layer in model.layers:
        if isinstance(layer, Linear):
            h = h @ layer.weight.T + layer.bias
        else:
            h = np.maximum(h, 0.0)
        trace.append(h)
    return trace


def forward(model: Classifier, x) -> np.ndarray:
    """Logits for one input (d,) or a batch (n, d)."""
    return forward_trace(model, x)[-1]


def predict(model: Classifier, x) -> np.ndarray:
    return np.argmax(forward(model, x), axis=-1)


def backward(model: Classifier, trace, grad_logits, want_params: bool = False):
    """Pull ``grad_logits`` back through the network.

    Returns the input gradient, and the list of (dW, db) per linear layer if
    ``want_params``. Batched traces sum parameter gradients over the batch.
    """
    g = np.asarray(grad_logits, dtype=np.float64)
    param_grads = []
    for layer, h_in, h_out in zip(
        reversed(model.layers), reversed(trace[:-1]), reversed(trace[1:])
    ):
        if isinstance(layer, Linear):
            if want_params:
                if g.ndim == 1:
                    param_grads.append((np.outer(g, h_in), g.copy()))
                else:
                    param_grads.append((g.T @ h_in, g.sum(axis=0)))
            g = g @ layer.weight
        else:
            # subgradient of relu at 0 is 0
            g = g * (h_out > 0.0)
    if want_params:
        return g, param_grads[::-1]
    return g


def input_gradient(model: Classifier, x, loss, y=None, taxonomy=None) -> np.ndarray:
    """Gradient of ``loss(forward(model, x))`` with respect to ``x``.

    ``loss`` is a :class:`superclass_attack.losses.LossSpec`.
    """
    from .losses import evaluate  # losses depends on this module's numerics

    trace = forward_trace(model, x)
    _, g_logits = evaluate(loss, trace[-1], y, taxonomy)
    return backward(model, trace, g_logits)


# ------------------------------------------------------------ weight files


def save_weights(model: Classifier, path) -> None:
    Path(path).write_bytes(weights_to_bytes(model))


def weights_to_bytes(model: Classifier) -> bytes:
    out = [WEIGHT_MAGIC, struct.pack("<II", WEIGHT_VERSION, len(model.layers))]
    for layer in model.layers:
        if isinstance(layer, Linear):
            out.append(struct.pack("<BII", KIND_LINEAR, layer.out_dim, layer.in_dim))
            out.append(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
            out.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
        else:
            out.append(struct.pack("<B", KIND_RELU))
    return b"".join(out)


def load_weights(path) -> Classifier:
    return weights_from_bytes(Path(path).read_bytes())


def weights_from_bytes(data: bytes) -> Classifier:
    if len(data) < 12 or data[:4] != WEIGHT_MAGIC:
        raise WeightFileError("bad magic: not a SAMW weight file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    pos = 12
    layers = []
    try:
        for _ in range(count):
            (kind,) = struct.unpack_from("<B", data, pos)
            pos += 1
            if kind == KIND_RELU:
                layers.append(ReLU())
                continue
            if kind != KIND_LINEAR:
                raise WeightFileError(f"unknown layer kind {kind}")
            n_out, n_in = struct.unpack_from("<II", data, pos)
            pos += 8
            n_w = n_out * n_in
            end = pos + 4 * (n_w + n_out)
            if end > len(data):
                raise WeightFileError("truncated weight file")
            w = np.frombuffer(data, dtype="<f4", count=n_w, offset=pos).reshape(n_out, n_in)
            b = np.frombuffer(data, dtype="<f4", count=n_out, offset=pos + 4 * n_w)
            pos = end
            layers.append(Linear(w.astype(np.float64), b.astype(np.float64)))
    except struct.error as exc:
        raise WeightFileError("truncated weight file") from exc
    if pos != len(data):
        raise WeightFileError(f"{len(data) - pos} trailing bytes after last layer")
    try:
        return Classifier(tuple(layers))
    except ValueError as exc:
        raise WeightFileError(str(exc)) from exc
