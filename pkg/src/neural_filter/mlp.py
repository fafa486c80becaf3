"""Feedforward ReLU/linear network: forward pass, input Jacobian, model files."""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from neural_filter.errors import (
    InvalidArchitectureError,
    InvalidArgumentError,
    ModelFormatError,
    ModelShapeError,
    ModelVersionError,
    TruncatedModelError,
)

RELU = "relu"
LINEAR = "linear"
_ACT_CODES = {LINEAR: 0, RELU: 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

MAGIC = b"NFMLP\x00"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = RELU

    def __post_init__(self):
        if int(self.width) != self.width or self.width < 1:
            raise InvalidArchitectureError(f"layer width must be a positive integer, got {self.width}")
        if self.activation not in _ACT_CODES:
            raise InvalidArchitectureError(f"unsupported activation '{self.activation}'")


def parse_layers(text):
    """``"10:relu, 2:linear"`` -> list of LayerSpec. Activation defaults to relu."""
    layers = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        width, _, act = item.partition(":")
        try:
            layers.append(LayerSpec(int(width), act.strip() or RELU))
        except ValueError:
            raise InvalidArchitectureError(f"bad layer '{item}'") from None
    return layers


def format_layers(layers):
    return ", ".join(f"{layer.width}:{layer.activation}" for layer in layers)


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Weights are stored as ``(out, in)`` matrices, so a layer computes
    ``act(W @ x + b)``. The last layer is always linear. Parameter arrays are
    read-only; training builds a new model."""

    input_dim: int
    layers: Tuple[LayerSpec, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    use_bias: bool = True

    def __post_init__(self):
        if self.input_dim < 1:
            raise InvalidArchitectureError("input_dim must be positive")
        if not self.layers:
            raise InvalidArchitectureError("at least one layer is required")
        if self.layers[-1].activation != LINEAR:
            raise InvalidArchitectureError("output layer must be linear")
        if len(self.weights) != len(self.layers) or len(self.biases) != len(self.layers):
            raise InvalidArchitectureError("one weight matrix and bias vector per layer")
        weights, biases = [], []
        fan_in = self.input_dim
        for layer, W, b in zip(self.layers, self.weights, self.biases):
            W = np.array(W, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if W.shape != (layer.width, fan_in) or b.shape != (layer.width,):
                raise InvalidArchitectureError(
                    f"layer expects W {(layer.width, fan_in)} and b {(layer.width,)}, "
                    f"got {W.shape} and {b.shape}"
                )
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise InvalidArgumentError("model parameters must be finite")
            if not self.use_bias and np.any(b != 0):
                raise InvalidArgumentError("bias-free model has non-zero biases")
            W.setflags(write=False)
            b.setflags(write=False)
            weights.append(W)
            biases.append(b)
            fan_in = layer.width
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))

    @property
    def output_dim(self):
        return self.layers[-1].width

    @property
    def widths(self):
        return np.array([layer.width for layer in self.layers], dtype=np.int64)

    @property
    def activation_codes(self):
        return np.array([_ACT_CODES[layer.activation] for layer in self.layers], dtype=np.int64)

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flat_params(self):
        """All parameters as one vector: ``W1 (row-major), b1, W2, b2, ...``."""
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def with_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise InvalidArgumentError(f"expected {self.n_params} parameters, got {flat.shape}")
        weights, biases = [], []
        off = 0
        for W in self.weights:
            out, fan_in = W.shape
            weights.append(flat[off : off + out * fan_in].reshape(out, fan_in).copy())
            off += out * fan_in
            biases.append(flat[off : off + out].copy())
            off += out
        return MlpModel(self.input_dim, self.layers, tuple(weights), tuple(biases), self.use_bias)

    def bias_mask(self):
        """1 for trainable entries of ``flat_params``; biases are 0 in bias-free mode."""
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(np.ones(W.size))
            parts.append(np.full(b.size, 1.0 if self.use_bias else 0.0))
        return np.concatenate(parts)

    def __call__(self, x):
        return forward(self, x)


def init_model(input_dim, layers, seed=0, use_bias=True):
    """He-uniform weights for ReLU layers, LeCun-uniform for linear ones;
    zero biases."""
    layers = [l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in layers]
    if input_dim < 1:
        raise InvalidArchitectureError("input_dim must be positive")
    if not layers:
        raise InvalidArchitectureError("empty layer list")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    fan_in = input_dim
    for layer in layers:
        gain = 6.0 if layer.activation == RELU else 3.0
        limit = np.sqrt(gain / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(layer.width, fan_in)))
        biases.append(np.zeros(layer.width))
        fan_in = layer.width
    return MlpModel(input_dim, tuple(layers), tuple(weights), tuple(biases), use_bias)


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim or x.ndim > 2:
        raise InvalidArgumentError(f"input shape {x.shape} does not match input_dim {model.input_dim}")
    return x


def forward(model, x):
    """Evaluate the network on one input vector or on rows of a 2-D array."""
    a = _check_input(model, x)
    for layer, W, b in zip(model.layers, model.weights, model.biases):
        a = a @ W.T + b
        if layer.activation == RELU:
            a = np.where(a > 0.0, a, 0.0)
    return a


def preactivations(model, x):
    """Pre-activation vectors of every layer for a single input."""
    a = _check_input(model, x).reshape(-1)
    out = []
    for layer, W, b in zip(model.layers, model.weights, model.biases):
        z = W @ a + b
        out.append(z)
        a = np.where(z > 0.0, z, 0.0) if layer.activation == RELU else z
    return out


def jacobian_input(model, x):
    """d(output)/d(input) at ``x``, shape ``(output_dim, input_dim)``.

    Chain rule along the forward pass. A ReLU with pre-activation <= 0
    contributes a zeroed row, so the derivative at a kink is 0.
    """
    a = _check_input(model, x).reshape(-1)
    J = np.eye(model.input_dim)
    for layer, W, b in zip(model.layers, model.weights, model.biases):
        z = W @ a + b
        if layer.activation == RELU:
            active = z > 0.0
            a = np.where(active, z, 0.0)
            J = (W * active[:, None]) @ J
        else:
            a = z
            J = W @ J
    return J


def save_model(model, path):
    """Write the binary model file (little-endian, float64 parameters).

    Layout: magic, version byte, bias flag byte, u32 input_dim, u32 n_layers,
    then per layer (u32 width, u8 activation), then per layer the row-major
    weight block followed by the bias block.
    """
    header = bytearray(MAGIC)
    header += struct.pack("<BBII", FORMAT_VERSION, int(model.use_bias), model.input_dim, len(model.layers))
    for layer in model.layers:
        header += struct.pack("<IB", layer.width, _ACT_CODES[layer.activation])
    body = b"".join(
        np.ascontiguousarray(W, dtype="<f8").tobytes() + np.ascontiguousarray(b, dtype="<f8").tobytes()
        for W, b in zip(model.weights, model.biases)
    )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(bytes(header) + body)
    tmp.replace(path)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedModelError(
                f"model file truncated: need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path):
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise ModelFormatError(f"{path}: not a model file")
    version, bias_flag, input_dim, n_layers = r.unpack("<BBII")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if input_dim < 1 or n_layers < 1:
        raise ModelShapeError(f"{path}: invalid dimensions input_dim={input_dim} n_layers={n_layers}")
    layers: List[LayerSpec] = []
    for _ in range(n_layers):
        width, code = r.unpack("<IB")
        if width < 1 or code not in _ACT_NAMES:
            raise ModelShapeError(f"{path}: invalid layer (width={width}, activation code={code})")
        layers.append(LayerSpec(width, _ACT_NAMES[code]))
    weights, biases = [], []
    fan_in = input_dim
    for layer in layers:
        W = np.frombuffer(r.take(8 * layer.width * fan_in), dtype="<f8").reshape(layer.width, fan_in)
        b = np.frombuffer(r.take(8 * layer.width), dtype="<f8")
        weights.append(W.astype(np.float64))
        biases.append(b.astype(np.float64))
        fan_in = layer.width
    if r.pos != len(data):
        raise ModelShapeError(f"{path}: {len(data) - r.pos} trailing bytes after parameter blocks")
    try:
        return MlpModel(input_dim, tuple(layers), tuple(weights), tuple(biases), bool(bias_flag))
    except (InvalidArchitectureError, InvalidArgumentError) as exc:
        raise ModelShapeError(f"{path}: {exc}") from exc
