"""Small fully-connected classifier over a flat parameter vector.

Gradients are hand-written reverse mode; Hessian-vector products are exact
forward-over-reverse (a tangent is pushed through the forward pass and then
through the backward pass), so spectral routines see machine-precision
curvature. Everything is a pure function of (spec, params, batch, loss).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyClassError, ParameterError
from .linalg import SeededRng
from .losses import LossSpec, loss_on_logits, resolve_sample_weights

TANH = "tanh"
SOFTPLUS = "softplus"
RELU = "relu"
ACTIVATIONS = (TANH, SOFTPLUS, RELU)


def _act_tanh(a):
    t = np.tanh(a)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


def _act_softplus(a):
    h = np.logaddexp(0.0, a)
    s = 1.0 / (1.0 + np.exp(-a))
    return h, s, s * (1.0 - s)


def _act_relu(a):
    d1 = (a > 0).astype(np.float64)
    # second derivative is 0 everywhere under the kink convention
    return a * d1, d1, np.zeros_like(a)


_ACT_FNS = {TANH: _act_tanh, SOFTPLUS: _act_softplus, RELU: _act_relu}


@dataclass(frozen=True)
class MlpSpec:
    """layer_sizes = (input_dim, hidden..., num_classes); last layer is linear."""

    layer_sizes: tuple
    activation: str = TANH
    bias: bool = True

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ParameterError("need at least (input_dim, num_classes)")
        if any(s < 1 for s in self.layer_sizes):
            raise ParameterError("layer sizes must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass(frozen=True)
class ParamBlock:
    name: str
    offset: int
    shape: tuple


def param_layout(spec: MlpSpec):
    """(blocks, total) — blocks tile the flat vector exactly, in layer order."""
    blocks = []
    offset = 0
    for l in range(spec.num_layers):
        fan_in, fan_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
        blocks.append(ParamBlock(f"w{l}", offset, (fan_out, fan_in)))
        offset += fan_out * fan_in
        if spec.bias:
            blocks.append(ParamBlock(f"b{l}", offset, (fan_out,)))
            offset += fan_out
    return tuple(blocks), offset


@dataclass
class ParamVector:
    """Flat float64 parameter vector plus its per-block layout."""

    data: np.ndarray
    layout: tuple

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        total = sum(int(np.prod(b.shape)) for b in self.layout)
        if self.data.shape != (total,):
            raise DimensionError(f"param data length {self.data.shape} != layout total {total}")

    def view(self, name: str) -> np.ndarray:
        for b in self.layout:
            if b.name == name:
                size = int(np.prod(b.shape))
                return self.data[b.offset : b.offset + size].reshape(b.shape)
        raise KeyError(name)

    def copy(self) -> "ParamVector":
        return ParamVector(self.data.copy(), self.layout)


def _unpack(spec: MlpSpec, flat: np.ndarray):
    """Split a flat vector into per-layer (W, b) views without copying."""
    ws, bs = [], []
    offset = 0
    for l in range(spec.num_layers):
        fan_in, fan_out = spec.layer_sizes[l], spec.layer_sizes[l + 1]
        ws.append(flat[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in))
        offset += fan_out * fan_in
        if spec.bias:
            bs.append(flat[offset : offset + fan_out])
            offset += fan_out
        else:
            bs.append(None)
    if offset != flat.shape[0]:
        raise DimensionError(f"param vector length {flat.shape[0]} != spec total {offset}")
    return ws, bs


def init_params(spec: MlpSpec, rng: SeededRng) -> ParamVector:
    """Per-layer uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    blocks, total = param_layout(spec)
    data = np.zeros(total)
    for b in blocks:
        if b.name.startswith("w"):
            fan_out, fan_in = b.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            size = fan_out * fan_in
            data[b.offset : b.offset + size] = rng.generator.uniform(-bound, bound, size)
    return ParamVector(data, blocks)


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray
    sample_weights: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.features.ndim != 2:
            raise DimensionError("batch features must be 2-D")
        if self.labels.shape[0] != self.features.shape[0]:
            raise DimensionError("labels length != feature rows")
        if self.sample_weights is not None:
            self.sample_weights = np.asarray(self.sample_weights, dtype=np.float64)
            if self.sample_weights.shape[0] != self.features.shape[0]:
                raise DimensionError("sample_weights length != feature rows")
            if np.any(self.sample_weights < 0):
                raise ParameterError("sample_weights must be non-negative")

    def __len__(self) -> int:
        return self.features.shape[0]


def _forward_pass(spec: MlpSpec, ws, bs, x):
    """Returns (logits, hs, acts) with hs[l] the input to layer l and
    acts[l] = (d1, d2) of the hidden activation after layer l."""
    h = x
    hs = [x]
    acts = []
    for l in range(spec.num_layers):
        a = h @ ws[l].T
        if bs[l] is not None:
            a = a + bs[l]
        if l < spec.num_layers - 1:
            h, d1, d2 = _ACT_FNS[spec.activation](a)
            acts.append((d1, d2, a))
            hs.append(h)
        else:
            return a, hs, acts
    raise AssertionError("unreachable")


def forward(spec: MlpSpec, w: ParamVector, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"inputs must be (n, {spec.input_dim}), got {x.shape}")
    ws, bs = _unpack(spec, w.data)
    logits, _, _ = _forward_pass(spec, ws, bs, x)
    return logits


def loss_grad(spec: MlpSpec, w: ParamVector, batch: Batch, loss: LossSpec):
    """(weighted mean loss, flat gradient) on one batch."""
    if len(batch) == 0:
        raise ParameterError("empty batch")
    ws, bs = _unpack(spec, w.data)
    logits, hs, acts = _forward_pass(spec, ws, bs, batch.features)
    weights = resolve_sample_weights(loss, batch.labels, batch.sample_weights)
    value, g_logits = loss_on_logits(loss, logits, batch.labels, weights)

    grad = np.zeros_like(w.data)
    gws, gbs = _unpack(spec, grad)
    g = g_logits
    for l in range(spec.num_layers - 1, -1, -1):
        gws[l][...] = g.T @ hs[l]
        if gbs[l] is not None:
            gbs[l][...] = g.sum(axis=0)
        if l > 0:
            d1, _, _ = acts[l - 1]
            g = (g @ ws[l]) * d1
    return value, grad


def hvp(spec: MlpSpec, w: ParamVector, batch: Batch, loss: LossSpec, v) -> np.ndarray:
    """Exact Hessian-vector product via forward-over-reverse.

    A tangent dv is carried through the forward pass (giving d(activations))
    and then through the reverse pass (giving d(gradient) = H v). No finite
    differences anywhere.
    """
    if len(batch) == 0:
        raise ParameterError("empty batch")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != w.data.shape:
        raise DimensionError(f"v length {v.shape} != params {w.data.shape}")
    ws, bs = _unpack(spec, w.data)
    vws, vbs = _unpack(spec, v)
    x = batch.features

    # forward with tangents
    h, hdot = x, np.zeros_like(x)
    hs, hdots, acts = [x], [hdot], []
    for l in range(spec.num_layers):
        a = h @ ws[l].T
        adot = hdot @ ws[l].T + h @ vws[l].T
        if bs[l] is not None:
            a = a + bs[l]
            adot = adot + vbs[l]
        if l < spec.num_layers - 1:
            h, d1, d2 = _ACT_FNS[spec.activation](a)
            hdot = d1 * adot
            acts.append((d1, d2, adot))
            hs.append(h)
            hdots.append(hdot)
        else:
            logits, logits_dot = a, adot

    weights = resolve_sample_weights(loss, batch.labels, batch.sample_weights)
    _, g, gdot = loss_on_logits(loss, logits, batch.labels, weights, logits_tangent=logits_dot)

    # reverse with tangents; only the tangent of the gradient is accumulated
    out = np.zeros_like(w.data)
    ohw, ohb = _unpack(spec, out)
    for l in range(spec.num_layers - 1, -1, -1):
        ohw[l][...] = gdot.T @ hs[l] + g.T @ hdots[l]
        if ohb[l] is not None:
            ohb[l][...] = gdot.sum(axis=0)
        if l > 0:
            d1, d2, adot = acts[l - 1]
            s = g @ ws[l]
            sdot = gdot @ ws[l] + g @ vws[l]
            g = s * d1
            gdot = sdot * d1 + s * d2 * adot
    return out


def per_class_batch(ds, class_id: int) -> Batch:
    """All samples of one class, unit weights."""
    labels = np.asarray(ds.labels)
    idx = np.flatnonzero(labels == class_id)
    if idx.size == 0:
        raise EmptyClassError(f"class {class_id} has no samples")
    return Batch(ds.features[idx], labels[idx])
