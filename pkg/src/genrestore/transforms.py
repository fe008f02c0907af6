"""Linear deformation operators and their adjoints.

Images are flattened row-major with channels interleaved: pixel ``(r, c)``
channel ``k`` of an ``h x w x ch`` image sits at index ``(r * w + c) * ch + k``
(numpy C order of an ``(h, w, ch)`` array).

Every operator acts on the last axis of its input, so a stack of vectors can be
pushed through in one call.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BadKernelLength, DimensionMismatch
from .numerics import as_matrix


@dataclass(frozen=True)
class ImageShape:
    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ValueError("image dimensions must be positive")

    @property
    def size(self):
        return self.height * self.width * self.channels

    @property
    def dims(self):
        return (self.height, self.width, self.channels)

    def unflatten(self, x):
        return np.asarray(x).reshape(*np.shape(x)[:-1], *self.dims)

    @staticmethod
    def flatten(img):
        return img.reshape(*img.shape[:-3], -1)


class FixedTransform:
    """A linear map with known input and output lengths."""

    in_dim: int
    out_dim: int

    def apply(self, x):
        return self._apply(self._check(x, self.in_dim, "input"))

    def apply_adjoint(self, v):
        return self._adjoint(self._check(v, self.out_dim, "adjoint input"))

    def __call__(self, x):
        return self.apply(x)

    def matrix(self):
        """Dense matrix of the operator (for tests and small problems)."""
        return self.apply(np.eye(self.in_dim)).T

    @staticmethod
    def _check(x, n, what):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (n,):
            raise DimensionMismatch(f"{what} has trailing dim {x.shape[-1:]}, expected {n}")
        return x


class Mask(FixedTransform):
    """Element-wise keep/erase (inpainting). Output has the input length."""

    def __init__(self, keep):
        self.keep = np.asarray(keep, dtype=bool).reshape(-1)
        if self.keep.size == 0:
            raise DimensionMismatch("empty mask")
        self.in_dim = self.out_dim = self.keep.size
        self._w = self.keep.astype(np.float64)

    def _apply(self, x):
        return x * self._w

    _adjoint = _apply

    def __repr__(self):
        return f"Mask(kept={int(self.keep.sum())}/{self.keep.size})"


class RowConv(FixedTransform):
    """Causal FIR filter run along every image row, channel by channel.

    ``y[r, n] = sum_k kernel[k] * x[r, n - k]`` with out-of-range samples
    taken as zero; output has the same size as the input.
    """

    def __init__(self, kernel, shape):
        self.kernel = np.asarray(kernel, dtype=np.float64).reshape(-1)
        if self.kernel.size < 1 or not np.all(np.isfinite(self.kernel)):
            raise BadKernelLength("kernel must be non-empty and finite")
        if self.kernel.size > shape.width:
            raise BadKernelLength(
                f"kernel length {self.kernel.size} exceeds image width {shape.width}")
        self.shape = shape
        self.in_dim = self.out_dim = shape.size

    def _apply(self, x):
        img = self.shape.unflatten(x)
        out = np.zeros_like(img)
        w = self.shape.width
        for k, c in enumerate(self.kernel):
            if c != 0.0:
                out[..., k:, :] += c * img[..., :w - k, :]
        return ImageShape.flatten(out)

    def _adjoint(self, v):
        img = self.shape.unflatten(v)
        out = np.zeros_like(img)
        w = self.shape.width
        for k, c in enumerate(self.kernel):
            if c != 0.0:
                out[..., :w - k, :] += c * img[..., k:, :]
        return ImageShape.flatten(out)

    def __repr__(self):
        return f"RowConv(kernel={self.kernel.tolist()})"


class AvgDownsample(FixedTransform):
    """Non-overlapping ``factor x factor`` box mean per channel."""

    def __init__(self, factor, shape):
        factor = int(factor)
        if factor < 1 or shape.height % factor or shape.width % factor:
            raise DimensionMismatch(
                f"factor {factor} must divide image size {shape.height}x{shape.width}")
        self.factor = factor
        self.shape = shape
        self.out_shape = ImageShape(shape.height // factor, shape.width // factor,
                                    shape.channels)
        self.in_dim = shape.size
        self.out_dim = self.out_shape.size

    def _apply(self, x):
        f = self.factor
        h, w, ch = self.out_shape.dims
        img = self.shape.unflatten(x)
        blocks = img.reshape(*img.shape[:-3], h, f, w, f, ch)
        return ImageShape.flatten(blocks.mean(axis=(-4, -2)))

    def _adjoint(self, v):
        f = self.factor
        img = self.out_shape.unflatten(v) / (f * f)
        up = np.repeat(np.repeat(img, f, axis=-3), f, axis=-2)
        return ImageShape.flatten(up)


class ChannelSelect(FixedTransform):
    """Extract one colour channel; output is an ``h * w`` gray image."""

    def __init__(self, channel, shape):
        if not 0 <= channel < shape.channels:
            raise DimensionMismatch(f"channel {channel} out of range for {shape}")
        self.channel = int(channel)
        self.shape = shape
        self.in_dim = shape.size
        self.out_dim = shape.height * shape.width

    def _apply(self, x):
        return x[..., self.channel::self.shape.channels]

    def _adjoint(self, v):
        out = np.zeros((*v.shape[:-1], self.in_dim))
        out[..., self.channel::self.shape.channels] = v
        return out

    def __repr__(self):
        return f"ChannelSelect({self.channel})"


class GeneralMatrix(FixedTransform):
    def __init__(self, a):
        self.a = as_matrix(a, "transform matrix")
        self.out_dim, self.in_dim = self.a.shape

    def _apply(self, x):
        return x @ self.a.T

    def _adjoint(self, v):
        return v @ self.a

    def matrix(self):
        return self.a.copy()


def identity(n):
    return Mask(np.ones(n, dtype=bool))


def apply(t, x):
    return t.apply(x)


def apply_adjoint(t, v):
    return t.apply_adjoint(v)


def _check_shared_dims(transforms, what):
    if not transforms:
        raise ValueError(f"{what} needs at least one transform")
    dims = {(t.in_dim, t.out_dim) for t in transforms}
    if len(dims) != 1:
        raise DimensionMismatch(f"{what} members disagree on dimensions: {sorted(dims)}")
    return dims.pop()


@dataclass
class ParametricFamily:
    """``T(alpha) = sum_i alpha_i * basis[i]`` with unknown ``alpha``."""

    basis: list
    constraint: str = "none"

    def __post_init__(self):
        self.basis = list(self.basis)
        self.in_dim, self.out_dim = _check_shared_dims(self.basis, "parametric family")
        if self.constraint not in ("none", "sum_to_one"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.constraint == "sum_to_one" and len(self.basis) < 2:
            raise ValueError("sum_to_one needs at least two basis transforms")

    @property
    def param_dim(self):
        return len(self.basis)

    def columns(self, x):
        """``N x M`` matrix whose i-th column is ``basis[i] @ x``."""
        x = FixedTransform._check(x, self.in_dim, "input")
        if x.ndim != 1:
            raise DimensionMismatch("family_columns takes a single vector")
        return np.column_stack([t.apply(x) for t in self.basis])

    def apply(self, alpha, x):
        alpha = self._check_alpha(alpha)
        return sum(a * t.apply(x) for a, t in zip(alpha, self.basis))

    def apply_adjoint(self, alpha, v):
        alpha = self._check_alpha(alpha)
        return sum(a * t.apply_adjoint(v) for a, t in zip(alpha, self.basis))

    def _check_alpha(self, alpha):
        alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
        if alpha.size != self.param_dim:
            raise DimensionMismatch(f"alpha has {alpha.size} entries, family has {self.param_dim}")
        return alpha


class _BlurFamily(ParametricFamily):
    """Blur family whose weighted sum collapses to a single RowConv."""

    def __init__(self, basis, shape):
        super().__init__(basis)
        self.shape = shape

    def columns(self, x):
        x = FixedTransform._check(x, self.in_dim, "input")
        if x.ndim != 1:
            raise DimensionMismatch("family_columns takes a single vector")
        img = self.shape.unflatten(x)
        w = self.shape.width
        cols = np.zeros((self.param_dim, *img.shape))
        for k in range(self.param_dim):
            cols[k, :, k:, :] = img[:, :w - k, :]
        return cols.reshape(self.param_dim, -1).T

    def apply(self, alpha, x):
        return RowConv(self._check_alpha(alpha), self.shape).apply(x)

    def apply_adjoint(self, alpha, v):
        return RowConv(self._check_alpha(alpha), self.shape).apply_adjoint(v)


class FrozenFamily(FixedTransform):
    """A parametric family with its coefficients fixed."""

    def __init__(self, family, alpha):
        self.family = family
        self.alpha = family._check_alpha(alpha)
        self.in_dim, self.out_dim = family.in_dim, family.out_dim

    def _apply(self, x):
        return self.family.apply(self.alpha, x)

    def _adjoint(self, v):
        return self.family.apply_adjoint(self.alpha, v)

    def __repr__(self):
        return f"FrozenFamily(alpha={self.alpha.tolist()})"


def family_columns(f, x):
    return f.columns(x)


def family_apply(f, alpha, x):
    return f.apply(alpha, x)


def blur_family(kernel_len, shape):
    """Unknown FIR row blur of length ``kernel_len`` as a parametric family.

    ``basis[k]`` is the causal zero-padded shift by ``k`` samples, so
    ``sum_k alpha_k basis[k] == RowConv(alpha)``.
    """
    kernel_len = int(kernel_len)
    if kernel_len < 1 or kernel_len > shape.width:
        raise BadKernelLength(f"kernel length {kernel_len} not in [1, {shape.width}]")
    basis = [RowConv(np.eye(kernel_len)[k], shape) for k in range(kernel_len)]
    return _BlurFamily(basis, shape)


def channel_family(shape, constraint="none"):
    """Gray = sum of weighted colour channels with unknown weights."""
    return ParametricFamily([ChannelSelect(k, shape) for k in range(shape.channels)],
                            constraint=constraint)


@dataclass
class DiscreteSet:
    """Finite set of candidate transforms; exactly one generated the data."""

    candidates: list

    def __post_init__(self):
        self.candidates = list(self.candidates)
        self.in_dim, self.out_dim = _check_shared_dims(self.candidates, "discrete set")

    def __len__(self):
        return len(self.candidates)


def channel_set(shape):
    return DiscreteSet([ChannelSelect(k, shape) for k in range(shape.channels)])
