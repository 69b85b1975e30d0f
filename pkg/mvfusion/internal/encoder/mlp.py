"""Per-agent MLP encoder with unit-norm output columns. Samples are columns."""
import struct
from dataclasses import dataclass, field

import numpy as np

from mvfusion.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, MIN_FEATURE_NORM
from mvfusion.errors import CorruptMessage, NumericalFailure, ShapeMismatch
from mvfusion.types import FeatureMatrix, as_matrix

ACTIVATIONS = ("relu", "tanh", "identity")

HEADER = struct.Struct("<4sHHI")
LAYER = struct.Struct("<II")
FLOAT = np.dtype("<f8")


@dataclass(eq=False)
class EncoderParams:
    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ShapeMismatch("unknown activation {}".format(self.activation))
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias per weight matrix")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ShapeMismatch("layer {}: bias {} for weight {}".format(l, b.shape, w.shape))
            if l > 0 and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeMismatch(
                    "layer {} expects {} inputs, previous layer has {} outputs".format(
                        l, w.shape[1], self.weights[l - 1].shape[0]
                    )
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalFailure("non-finite parameters", layer=l)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_arrays(self, arrays):
        return EncoderParams(list(arrays[0::2]), list(arrays[1::2]), self.activation)

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)
    output: np.ndarray = None
    norms: np.ndarray = None


def init_params(layer_sizes, rng, activation="relu"):
    """Kaiming-scaled Gaussian weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights, biases, activation)


def _activate(name, a):
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    return a


def _activation_slope(name, a, h):
    if name == "relu":
        return (a > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - h * h
    return np.ones_like(a)


def forward_with_cache(params, x_batch):
    x = as_matrix(x_batch, "encoder input")
    if x.shape[0] != params.input_dim:
        raise ShapeMismatch(
            "encoder expects {} input features, got {}".format(params.input_dim, x.shape[0])
        )
    cache = ForwardCache()
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        a = w @ h + b[:, None]
        cache.pre_activations.append(a)
        h = a if l == last else _activate(params.activation, a)

    norms = np.linalg.norm(h, axis=0)
    if norms.size and norms.min() < MIN_FEATURE_NORM:
        raise NumericalFailure("encoder output collapsed to zero before normalization", layer=last)
    cache.output = h / norms
    cache.norms = norms
    return FeatureMatrix(cache.output), cache


def forward(params, x_batch):
    z, _ = forward_with_cache(params, x_batch)
    return z


def backward(params, x_batch, upstream_grad, cache=None):
    """Parameter gradients as a list aligned with params.arrays()."""
    if cache is None:
        _, cache = forward_with_cache(params, x_batch)
    dz = np.asarray(upstream_grad, dtype=np.float64)
    z = cache.output
    if dz.shape != z.shape:
        raise ShapeMismatch("upstream gradient {} for output {}".format(dz.shape, z.shape))

    # Jacobian of y -> y/|y| is (I - z z^T)/|y|
    delta = (dz - z * np.sum(z * dz, axis=0)) / cache.norms

    grads = [None] * (2 * len(params.weights))
    for l in range(len(params.weights) - 1, -1, -1):
        dw = delta @ cache.inputs[l].T
        db = delta.sum(axis=1)
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NumericalFailure("non-finite parameter gradient", layer=l)
        grads[2 * l], grads[2 * l + 1] = dw, db
        if l > 0:
            dh = params.weights[l].T @ delta
            a = cache.pre_activations[l - 1]
            delta = dh * _activation_slope(params.activation, a, cache.inputs[l])
    return grads


def save_params(params, path):
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_params(path):
    with open(path, "rb") as f:
        return params_from_bytes(f.read())


def params_to_bytes(params):
    parts = [
        HEADER.pack(
            CHECKPOINT_MAGIC,
            CHECKPOINT_VERSION,
            ACTIVATIONS.index(params.activation),
            len(params.weights),
        )
    ]
    for w, b in zip(params.weights, params.biases):
        parts.append(LAYER.pack(*w.shape))
        parts.append(np.ascontiguousarray(w, dtype=FLOAT).tobytes(order="C"))
        parts.append(np.asarray(b, dtype=FLOAT).tobytes())
    return b"".join(parts)


def params_from_bytes(data):
    buf = bytes(data)
    if len(buf) < HEADER.size:
        raise CorruptMessage("checkpoint shorter than its header")
    magic, version, activation, layers = HEADER.unpack_from(buf, 0)
    if magic != CHECKPOINT_MAGIC or version != CHECKPOINT_VERSION:
        raise CorruptMessage("not a version {} encoder checkpoint".format(CHECKPOINT_VERSION))
    if activation >= len(ACTIVATIONS) or layers == 0:
        raise CorruptMessage("bad checkpoint header")

    offset = HEADER.size
    weights, biases = [], []
    for _ in range(layers):
        if offset + LAYER.size > len(buf):
            raise CorruptMessage("checkpoint truncated at byte {}".format(offset))
        rows, cols = LAYER.unpack_from(buf, offset)
        offset += LAYER.size
        size = (rows * cols + rows) * FLOAT.itemsize
        if offset + size > len(buf):
            raise CorruptMessage("checkpoint truncated at byte {}".format(offset))
        w = np.frombuffer(buf, dtype=FLOAT, count=rows * cols, offset=offset)
        offset += rows * cols * FLOAT.itemsize
        b = np.frombuffer(buf, dtype=FLOAT, count=rows, offset=offset)
        offset += rows * FLOAT.itemsize
        weights.append(w.reshape((rows, cols)).astype(np.float64))
        biases.append(b.astype(np.float64))
    return EncoderParams(weights, biases, ACTIVATIONS[activation])
