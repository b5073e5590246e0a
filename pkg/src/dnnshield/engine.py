"""Minimal CNN inference and gradient engine.

Single-instance (C,H,W) activations, float32 everywhere, deterministic
accumulation order (see kernels package). Dense and masked forward passes,
reverse-mode gradients w.r.t. the input for attack generation, and a plain
seeded-SGD trainer for toy victim models.
"""

import math

import numpy as np

from . import kernels
from .errors import (
    DivergenceError,
    NumericalError,
    PlanMismatch,
    ShapeMismatch,
    UnsupportedLayer,
)

F32 = np.float32


def _as_f32(a):
    return np.ascontiguousarray(a, dtype=F32)


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced in {name}")


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Conv2D:
    kind = "conv2d"

    def __init__(self, weights, biases, stride=1, padding=0):
        self.weights = _as_f32(weights)          # (F, C, KH, KW)
        self.biases = _as_f32(biases)            # (F,)
        if self.weights.ndim != 4 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeMismatch("conv2d weights must be (F,C,KH,KW) with (F,) biases")
        if self.weights.shape[0] < 1:
            raise ShapeMismatch("conv2d needs at least one filter")
        if stride < 1 or padding < 0:
            raise ShapeMismatch("conv2d stride must be >=1 and padding >=0")
        self.stride = int(stride)
        self.padding = int(padding)

    @property
    def num_filters(self):
        return self.weights.shape[0]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        f, wc, kh, kw = self.weights.shape
        if wc != c:
            raise ShapeMismatch(f"conv2d expects {wc} input channels, got {c}")
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch("conv2d kernel larger than padded input")
        return (f, ho, wo)


class FullyConnected:
    kind = "fully_connected"

    def __init__(self, weights, biases):
        self.weights = _as_f32(weights)          # (O, D)
        self.biases = _as_f32(biases)            # (O,)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeMismatch("fc weights must be (O,D) with (O,) biases")
        if self.weights.shape[0] < 1:
            raise ShapeMismatch("fc needs at least one filter (output neuron)")

    @property
    def num_filters(self):
        return self.weights.shape[0]

    def out_shape(self, in_shape):
        d = int(np.prod(in_shape))
        if d != self.weights.shape[1]:
            raise ShapeMismatch(f"fc expects {self.weights.shape[1]} inputs, got {d}")
        return (self.weights.shape[0],)


class ReLU:
    kind = "relu"

    def out_shape(self, in_shape):
        return in_shape


class MaxPool:
    kind = "maxpool"

    def __init__(self, size, stride=None):
        self.size = int(size)
        self.stride = int(stride) if stride is not None else int(size)
        if self.size < 1 or self.stride < 1:
            raise ShapeMismatch("pool size and stride must be >= 1")

    def out_shape(self, in_shape):
        c, h, w = in_shape
        ho = (h - self.size) // self.stride + 1
        wo = (w - self.size) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch("pool window larger than input")
        return (c, ho, wo)


class AvgPool(MaxPool):
    kind = "avgpool"


class Flatten:
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Softmax:
    kind = "softmax"

    def out_shape(self, in_shape):
        return in_shape


PARAM_KINDS = ("conv2d", "fully_connected")


class Filter:
    """View of one filter inside a parameter layer (shared storage)."""

    def __init__(self, layer_index, index, weights, bias):
        self.layer_index = layer_index
        self.index = index
        self.weights = weights
        self.bias = bias

    @property
    def key(self):
        return (self.layer_index, self.index)

    @property
    def flat(self):
        return self.weights.reshape(-1)

    @property
    def weight_count(self):
        return int(self.weights.size)


class Model:
    """Ordered layers + input shape. Immutable by convention after training."""

    def __init__(self, layers, input_shape, num_classes, metadata=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.num_classes = int(num_classes)
        self.metadata = dict(metadata or {})
        self.validate()

    def validate(self):
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ShapeMismatch("model must end with a single terminal softmax")
        if sum(1 for l in self.layers if l.kind == "softmax") != 1:
            raise ShapeMismatch("exactly one softmax layer is allowed")
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        if shape != (self.num_classes,):
            raise ShapeMismatch(
                f"model output shape {shape} != ({self.num_classes},)")

    def filters(self):
        for li, layer in enumerate(self.layers):
            if layer.kind == "conv2d":
                for f in range(layer.num_filters):
                    yield Filter(li, f, layer.weights[f], float(layer.biases[f]))
            elif layer.kind == "fully_connected":
                for f in range(layer.num_filters):
                    yield Filter(li, f, layer.weights[f].reshape(-1, 1, 1),
                                 float(layer.biases[f]))

    def filter_keys(self):
        return [f.key for f in self.filters()]

    def param_layer_indices(self):
        return [i for i, l in enumerate(self.layers) if l.kind in PARAM_KINDS]

    def clone(self):
        layers = []
        for l in self.layers:
            if l.kind == "conv2d":
                layers.append(Conv2D(l.weights.copy(), l.biases.copy(), l.stride, l.padding))
            elif l.kind == "fully_connected":
                layers.append(FullyConnected(l.weights.copy(), l.biases.copy()))
            elif l.kind == "maxpool":
                layers.append(MaxPool(l.size, l.stride))
            elif l.kind == "avgpool":
                layers.append(AvgPool(l.size, l.stride))
            elif l.kind == "relu":
                layers.append(ReLU())
            elif l.kind == "flatten":
                layers.append(Flatten())
            elif l.kind == "softmax":
                layers.append(Softmax())
            else:
                raise UnsupportedLayer(l.kind)
        return Model(layers, self.input_shape, self.num_classes, dict(self.metadata))


class LabeledDataset:
    """Inputs (N,C,H,W) float32 plus integer class labels."""

    def __init__(self, inputs, labels, num_classes):
        self.inputs = _as_f32(inputs)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = int(num_classes)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch("inputs and labels must have equal length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= num_classes):
            raise ShapeMismatch("labels outside [0, num_classes)")

    def __len__(self):
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)))


def softmax(logits):
    z = logits - np.max(logits)
    e = np.exp(z, dtype=F32)
    return e / e.sum(dtype=F32)


def _run_forward(model, x, overrides=None):
    """Run all layers. Returns (logits, probs)."""
    x = np.asarray(x)
    if tuple(x.shape) != model.input_shape:
        raise ShapeMismatch(f"input shape {x.shape} != model {model.input_shape}")
    a = _as_f32(x)
    logits = None
    for li, layer in enumerate(model.layers):
        if layer.kind == "conv2d":
            w = overrides.get(li, layer.weights) if overrides else layer.weights
            xpad = _pad(a, layer.padding)
            a = kernels.conv2d_forward(xpad, w, layer.biases, layer.stride)
        elif layer.kind == "fully_connected":
            w = overrides.get(li, layer.weights) if overrides else layer.weights
            a = kernels.fc_forward(a.reshape(-1), w, layer.biases)
        elif layer.kind == "relu":
            a = np.maximum(a, F32(0))
        elif layer.kind == "maxpool":
            a, _ = kernels.maxpool_forward(a, layer.size, layer.stride)
        elif layer.kind == "avgpool":
            a = kernels.avgpool_forward(a, layer.size, layer.stride)
        elif layer.kind == "flatten":
            a = a.reshape(-1)
        elif layer.kind == "softmax":
            logits = a
            a = softmax(a)
        else:
            raise UnsupportedLayer(f"no forward rule for layer kind {layer.kind!r}")
        _check_finite(f"layer {li} ({layer.kind})", a)
    return logits, a


def forward(model, x):
    """Dense pass. Returns (logits, probs) as float32 vectors."""
    return _run_forward(model, x)


def _plan_overrides(model, plan):
    """Masked weight arrays per parameter layer, validated against the model."""
    masks = plan.masks
    seen = 0
    overrides = {}
    for li in model.param_layer_indices():
        layer = model.layers[li]
        nf = layer.num_filters
        per_filter = layer.weights[0].size if layer.kind == "conv2d" else layer.weights.shape[1]
        rows = []
        for f in range(nf):
            m = masks.get((li, f))
            if m is None:
                raise PlanMismatch(f"plan missing filter ({li},{f})")
            if m.shape != (per_filter,):
                raise PlanMismatch(
                    f"plan mask for ({li},{f}) has {m.shape[0]} bits, filter has {per_filter}")
            rows.append(m)
            seen += 1
        mask = np.stack(rows).reshape(layer.weights.shape)
        overrides[li] = np.where(mask, layer.weights, F32(0))
    if seen != len(masks):
        raise PlanMismatch("plan contains filters not present in the model")
    return overrides


def forward_masked(model, x, plan):
    """Forward pass with the plan's inactive weights treated as exact zeros."""
    return _run_forward(model, x, overrides=_plan_overrides(model, plan))


# ---------------------------------------------------------------------------
# Losses (gradients are taken at the logits; softmax handled analytically)
# ---------------------------------------------------------------------------

class CrossEntropyLoss:
    """Negative log-likelihood of `label` under softmax(logits)."""

    def __init__(self, label):
        self.label = int(label)

    def value_and_logit_grad(self, logits, probs):
        z = logits.astype(np.float64)
        m = z.max()
        value = m + math.log(np.exp(z - m).sum()) - z[self.label]
        d = probs.astype(F32).copy()
        d[self.label] -= F32(1)
        return value, d


class CWLoss:
    """Hinge on the logit margin: max(max_{i!=t} z_i - z_t, -k) for targeted
    attacks; sign-swapped margin for the untargeted variant."""

    def __init__(self, target, k=0.0, targeted=True):
        self.target = int(target)
        self.k = float(k)
        self.targeted = targeted

    def margin(self, logits):
        z = logits.astype(np.float64)
        t = self.target
        others = np.delete(np.arange(z.shape[0]), t)
        best_other = others[int(np.argmax(z[others]))]
        if self.targeted:
            return z[best_other] - z[t], best_other
        return z[t] - z[best_other], best_other

    def value_and_logit_grad(self, logits, probs):
        margin, best_other = self.margin(logits)
        value = max(margin, -self.k)
        d = np.zeros_like(logits, dtype=F32)
        if margin > -self.k:
            if self.targeted:
                d[best_other] += F32(1)
                d[self.target] -= F32(1)
            else:
                d[self.target] += F32(1)
                d[best_other] -= F32(1)
        return value, d


class AdaptiveLoss:
    """c * CW margin loss + beta * ||probs - target_probs||_1.

    The L1 term is differentiated through the softmax analytically. The
    attack's L2 distortion term is handled by the optimizer, not here.
    """

    def __init__(self, cw, c=1.0, beta=0.0, target_probs=None):
        self.cw = cw
        self.c = float(c)
        self.beta = float(beta)
        self.target_probs = None if target_probs is None else _as_f32(target_probs)

    def value_and_logit_grad(self, logits, probs):
        cw_value, d = self.cw.value_and_logit_grad(logits, probs)
        value = self.c * cw_value
        d = F32(self.c) * d
        if self.beta > 0.0 and self.target_probs is not None:
            diff = probs.astype(np.float64) - self.target_probs.astype(np.float64)
            value += self.beta * np.abs(diff).sum()
            s = np.sign(diff)
            p = probs.astype(np.float64)
            dl1 = p * (s - float((s * p).sum()))
            d = d + F32(self.beta) * dl1.astype(F32)
        return value, d


# ---------------------------------------------------------------------------
# Reverse mode
# ---------------------------------------------------------------------------

def _backward(model, x, loss, overrides=None, want_params=False):
    a_in = _as_f32(x)
    # forward with per-layer records
    a = a_in
    records = []
    logits = None
    for li, layer in enumerate(model.layers):
        rec = {"layer": layer}
        if layer.kind == "conv2d":
            w = overrides.get(li, layer.weights) if overrides else layer.weights
            xpad = _pad(a, layer.padding)
            rec.update(xpad=xpad, w=w)
            a = kernels.conv2d_forward(xpad, w, layer.biases, layer.stride)
        elif layer.kind == "fully_connected":
            w = overrides.get(li, layer.weights) if overrides else layer.weights
            flat = a.reshape(-1)
            rec.update(x=flat, w=w)
            a = kernels.fc_forward(flat, w, layer.biases)
        elif layer.kind == "relu":
            rec.update(mask=a > 0)
            a = np.maximum(a, F32(0))
        elif layer.kind == "maxpool":
            rec.update(in_shape=a.shape)
            a, idx = kernels.maxpool_forward(a, layer.size, layer.stride)
            rec.update(idx=idx)
        elif layer.kind == "avgpool":
            rec.update(in_shape=a.shape)
            a = kernels.avgpool_forward(a, layer.size, layer.stride)
        elif layer.kind == "flatten":
            rec.update(in_shape=a.shape)
            a = a.reshape(-1)
        elif layer.kind == "softmax":
            logits = a
            a = softmax(a)
        else:
            raise UnsupportedLayer(f"no backward rule for layer kind {layer.kind!r}")
        _check_finite(f"layer {li} ({layer.kind})", a)
        records.append(rec)

    value, g = loss.value_and_logit_grad(logits, a)
    param_grads = {} if want_params else None

    for li in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[li]
        rec = records[li]
        if layer.kind == "softmax":
            continue  # loss gradient is already w.r.t. logits
        if layer.kind == "conv2d":
            if want_params:
                dw, db = kernels.conv2d_backward_weights(
                    g, rec["xpad"], layer.stride,
                    layer.weights.shape[2], layer.weights.shape[3])
                param_grads[li] = (dw, db)
            p = layer.padding
            hp, wp = rec["xpad"].shape[1], rec["xpad"].shape[2]
            dxpad = kernels.conv2d_backward_input(g, rec["w"], layer.stride, hp, wp)
            g = dxpad[:, p:hp - p, p:wp - p] if p else dxpad
            g = np.ascontiguousarray(g)
        elif layer.kind == "fully_connected":
            if want_params:
                dw, db = kernels.fc_backward_weights(g, rec["x"])
                param_grads[li] = (dw, db)
            g = kernels.fc_backward_input(g, rec["w"])
        elif layer.kind == "relu":
            g = np.where(rec["mask"], g, F32(0))
        elif layer.kind == "maxpool":
            _, h, w = rec["in_shape"]
            g = kernels.maxpool_backward(g, rec["idx"], h, w)
        elif layer.kind == "avgpool":
            _, h, w = rec["in_shape"]
            g = kernels.avgpool_backward(g, layer.size, layer.stride, h, w)
        elif layer.kind == "flatten":
            g = g.reshape(rec["in_shape"])
        _check_finite(f"backward layer {li} ({layer.kind})", g)

    g = g.reshape(model.input_shape)
    return value, g, param_grads, logits, a


def gradient_wrt_input(model, x, loss):
    """d(loss)/d(input), same shape as the input, float32."""
    _, g, _, _, _ = _backward(model, x, loss)
    return g


def loss_and_gradient(model, x, loss):
    """(loss value, d(loss)/d(input), logits, probs) in one pass."""
    value, g, _, logits, probs = _backward(model, x, loss)
    return value, g, logits, probs


def loss_value(model, x, loss):
    logits, probs = _run_forward(model, x)
    value, _ = loss.value_and_logit_grad(logits, probs)
    return value


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def init_weights(model, seed):
    """Seed-driven uniform(-r, r) init, r = 1/sqrt(fan_in); biases zero."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    for li in model.param_layer_indices():
        layer = model.layers[li]
        if layer.kind == "conv2d":
            fan_in = int(np.prod(layer.weights.shape[1:]))
        else:
            fan_in = layer.weights.shape[1]
        r = 1.0 / math.sqrt(fan_in)
        layer.weights[...] = rng.uniform(-r, r, layer.weights.shape).astype(F32)
        layer.biases[...] = F32(0)
    return model


def accuracy(model, dataset):
    if len(dataset) == 0:
        return 0.0
    hits = 0
    for i in range(len(dataset)):
        logits, _ = forward(model, dataset.inputs[i])
        if int(np.argmax(logits)) == int(dataset.labels[i]):
            hits += 1
    return hits / len(dataset)


def train_fixture(dataset, arch, epochs, lr, seed):
    """Plain per-sample SGD with cross-entropy. Deterministic given seed."""
    if len(dataset) == 0:
        raise ShapeMismatch("dataset is empty")
    if lr <= 0:
        raise ValueError("lr must be > 0")
    model = arch.clone()
    init_weights(model, seed)
    rng = np.random.Generator(np.random.Philox(key=(int(seed) << 16) + 1))
    lr32 = F32(lr)
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        for n in order:
            loss = CrossEntropyLoss(int(dataset.labels[n]))
            value, _, grads, _, _ = _backward(model, dataset.inputs[n], loss, want_params=True)
            if not math.isfinite(value):
                raise DivergenceError(f"loss became non-finite in epoch {epoch}")
            for li, (dw, db) in grads.items():
                layer = model.layers[li]
                layer.weights -= lr32 * dw
                layer.biases -= lr32 * db
    model.metadata.update(
        seed=int(seed), epochs=int(epochs), lr=float(lr),
        train_accuracy=accuracy(model, dataset),
    )
    return model
