"""Generative models ``X = G(Z)`` with ``Z ~ N(0, I)``.

Two kinds are provided: a feed-forward MLP with leaky-ReLU/identity layers and
an affine map ``A Z + b`` (used as a closed-form oracle). Both support batched
forward evaluation over leading axes and single-point vector-Jacobian products.

The leaky-ReLU derivative at a pre-activation of exactly 0 is taken to be the
slope (the left-sided derivative).
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MalformedFile, VersionMismatch
from .numerics import as_matrix, as_vector

MAGIC = b"GMG1"
KIND_MLP = 0
KIND_LINEAR = 1
ACT_IDENTITY = 0
ACT_LEAKY_RELU = 1
_ACT_CODES = {"identity": ACT_IDENTITY, "leaky_relu": ACT_LEAKY_RELU}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "leaky_relu"
    slope: float = 0.2

    def __post_init__(self):
        w = as_matrix(self.weight, "weight")
        b = as_vector(self.bias, "bias")
        if b.size != w.shape[0]:
            raise DimensionMismatch(
                f"bias length {b.size} != weight rows {w.shape[0]}")
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "slope", float(self.slope))

    def activate(self, pre):
        if self.activation == "identity":
            return pre
        return np.where(pre > 0, pre, self.slope * pre)

    def derivative(self, pre):
        if self.activation == "identity":
            return np.ones_like(pre)
        return np.where(pre > 0, 1.0, self.slope)


class _Model:
    input_dim: int
    output_dim: int

    def _check_input(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1:] != (self.input_dim,):
            raise DimensionMismatch(
                f"latent has trailing dim {z.shape[-1:]}, expected {self.input_dim}")
        return z

    def __call__(self, z):
        return self.forward(z)

    def vjp(self, z, cotangent):
        _, tape = self.forward_with_tape(z)
        return self.vjp_from_tape(tape, cotangent)

    def _check_cotangent(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.output_dim,):
            raise DimensionMismatch(
                f"cotangent has shape {u.shape}, expected ({self.output_dim},)")
        return u


@dataclass(eq=False)
class MlpGenerator(_Model):
    layers: list = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise DimensionMismatch("consecutive layer dimensions do not chain")
        self.input_dim = self.layers[0].weight.shape[1]
        self.output_dim = self.layers[-1].weight.shape[0]

    def forward(self, z):
        h = self._check_input(z)
        for layer in self.layers:
            h = layer.activate(h @ layer.weight.T + layer.bias)
        return h

    def forward_with_tape(self, z):
        h = self._check_input(z)
        if h.ndim != 1:
            raise DimensionMismatch("tape evaluation takes a single latent vector")
        pres = []
        for layer in self.layers:
            pre = layer.weight @ h + layer.bias
            pres.append(pre)
            h = layer.activate(pre)
        return h, pres

    def vjp_from_tape(self, tape, cotangent):
        g = self._check_cotangent(cotangent)
        for layer, pre in zip(reversed(self.layers), reversed(tape)):
            g = layer.weight.T @ (g * layer.derivative(pre))
        return g

    def pre_activations(self, z):
        return self.forward_with_tape(z)[1]

    def __eq__(self, other):
        if not isinstance(other, MlpGenerator) or len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation and a.slope == b.slope
            and np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers))


@dataclass(eq=False)
class LinearGenerator(_Model):
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        self.b = as_vector(self.b, "b")
        if self.b.size != self.A.shape[0]:
            raise DimensionMismatch("len(b) must equal rows(A)")
        self.input_dim = self.A.shape[1]
        self.output_dim = self.A.shape[0]

    def forward(self, z):
        return self._check_input(z) @ self.A.T + self.b

    def forward_with_tape(self, z):
        return self.forward(z), None

    def vjp_from_tape(self, tape, cotangent):
        return self.A.T @ self._check_cotangent(cotangent)

    def __eq__(self, other):
        return (isinstance(other, LinearGenerator)
                and np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b))


def forward(model, z):
    return model.forward(z)


def vjp(model, z, cotangent):
    return model.vjp(z, cotangent)


def random_mlp(latent_dim, output_dim, hidden=(64,), slope=0.2, seed=0,
               output_scale=0.25, output_offset=0.5):
    """Randomly initialised MLP whose outputs land roughly in [0, 1]."""
    rng = np.random.Generator(np.random.PCG64(seed))
    dims = [latent_dim, *hidden, output_dim]
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        gain = output_scale if last else np.sqrt(2.0)
        w = rng.standard_normal((d_out, d_in)) * gain / np.sqrt(d_in)
        if last:
            b = output_offset + 0.1 * rng.standard_normal(d_out)
            layers.append(Layer(w, b, "identity", 0.0))
        else:
            layers.append(Layer(w, 0.1 * rng.standard_normal(d_out), "leaky_relu", slope))
    return MlpGenerator(layers)


def random_linear(latent_dim, output_dim, seed=0, scale=0.25, offset=0.5):
    rng = np.random.Generator(np.random.PCG64(seed))
    a = rng.standard_normal((output_dim, latent_dim)) * scale / np.sqrt(latent_dim)
    b = offset + 0.1 * rng.standard_normal(output_dim)
    return LinearGenerator(a, b)


# --- model files -------------------------------------------------------------
# "GMG1", u32 kind, u32 layer count, then per layer:
#   u32 rows, u32 cols, u32 activation code, f64 slope,
#   f64 weights (row-major, rows*cols), f64 bias (rows).
# All little-endian. A linear generator is stored as one identity layer.

def _model_layers(model):
    if isinstance(model, LinearGenerator):
        return KIND_LINEAR, [Layer(model.A, model.b, "identity", 0.0)]
    if isinstance(model, MlpGenerator):
        return KIND_MLP, model.layers
    raise TypeError(f"cannot serialise {type(model).__name__}")


def dumps_model(model):
    kind, layers = _model_layers(model)
    parts = [MAGIC, struct.pack("<II", kind, len(layers))]
    for layer in layers:
        rows, cols = layer.weight.shape
        parts.append(struct.pack("<IIId", rows, cols, _ACT_CODES[layer.activation],
                                 layer.slope))
        parts.append(layer.weight.astype("<f8").tobytes(order="C"))
        parts.append(layer.bias.astype("<f8").tobytes())
    return b"".join(parts)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise MalformedFile(f"truncated while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, count, what):
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)


def loads_model(data):
    r = _Reader(bytes(data))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        if magic[:3] == MAGIC[:3]:
            raise VersionMismatch(f"model file version {magic[3:]!r}, expected b'1'")
        raise MalformedFile(f"bad magic {magic!r}", 0)
    kind, count = r.unpack("<II", "header")
    if kind not in (KIND_MLP, KIND_LINEAR):
        raise MalformedFile(f"unknown model kind {kind}", 4)
    if count < 1 or (kind == KIND_LINEAR and count != 1):
        raise MalformedFile(f"invalid layer count {count}", 8)
    layers = []
    for i in range(count):
        offset = r.pos
        rows, cols, code, slope = r.unpack("<IIId", f"layer {i} header")
        if code not in _ACT_NAMES:
            raise MalformedFile(f"unknown activation code {code}", offset + 8)
        w = r.floats(rows * cols, f"layer {i} weights").reshape(rows, cols)
        b = r.floats(rows, f"layer {i} bias")
        try:
            layers.append(Layer(w, b, _ACT_NAMES[code], slope))
        except ValueError as exc:
            raise MalformedFile(f"layer {i}: {exc}", offset) from exc
    if r.pos != len(r.data):
        raise MalformedFile("trailing bytes after last layer", r.pos)
    try:
        if kind == KIND_LINEAR:
            return LinearGenerator(layers[0].weight, layers[0].bias)
        return MlpGenerator(layers)
    except ValueError as exc:
        raise MalformedFile(str(exc)) from exc


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())
