"""Synthetic observations drawn from a known generative model."""

import os
from dataclasses import dataclass

import numpy as np

from . import transforms as tf
from .errors import DimensionMismatch
from .estimators import Mixture
from .io import save_tensor
from .numerics import Prng, gaussian_vector


@dataclass
class SynthSpec:
    """What to synthesise.

    ``transform`` is a fixed transform, or a parametric family / discrete
    set / :class:`Mixture` together with the true ``alpha`` or ``index``.
    """

    generators: list
    transform: object
    beta: float = 0.0
    alpha: object = None
    index: int = None

    def true_transform(self):
        t = self.transform
        if isinstance(t, tf.ParametricFamily):
            return tf.FrozenFamily(t, self.alpha)
        if isinstance(t, tf.DiscreteSet):
            return t.candidates[self.index]
        return t


@dataclass
class SynthSample:
    z_true: object
    x_true: object
    y: np.ndarray
    seed: int


def synth_problem(spec, seed, out_dir=None, prefix=""):
    """Draw ``Z ~ N(0, I)``, ``X = G(Z)`` and ``Y = T(X) + beta * W``.

    One stream seeded with ``seed`` supplies the latent(s) first and the noise
    after. With ``out_dir`` the draws are saved as tensor files.
    """
    if spec.beta < 0:
        raise ValueError("beta must be non-negative")
    prng = Prng(seed)
    zs = [gaussian_vector(prng, g.input_dim) for g in spec.generators]
    xs = [g.forward(z) for g, z in zip(spec.generators, zs)]
    if isinstance(spec.transform, Mixture):
        if len(xs) != 2 or xs[0].shape != xs[1].shape:
            raise DimensionMismatch("a mixture needs two generators of equal output length")
        a = np.asarray(spec.transform.alpha if spec.alpha is None else spec.alpha, float)
        clean = a[0] * xs[0] + a[1] * xs[1]
        z_true, x_true = tuple(zs), tuple(xs)
    else:
        if len(xs) != 1:
            raise DimensionMismatch("restoration synthesis takes one generator")
        t = spec.true_transform()
        if t.in_dim != xs[0].size:
            raise DimensionMismatch(f"generator output {xs[0].size} != transform input {t.in_dim}")
        clean = t.apply(xs[0])
        z_true, x_true = zs[0], xs[0]
    noise = gaussian_vector(prng, clean.size)
    y = clean + spec.beta * noise
    sample = SynthSample(z_true, x_true, y, int(seed))
    if out_dir is not None:
        _save(sample, out_dir, prefix)
    return sample


def _save(sample, out_dir, prefix):
    os.makedirs(out_dir, exist_ok=True)
    path = lambda name: os.path.join(out_dir, f"{prefix}{name}.gtn")  # noqa: E731
    save_tensor(sample.y, path("y"))
    save_tensor(np.array([sample.seed], dtype=np.float64), path("seed"))
    if isinstance(sample.z_true, tuple):
        for i, (z, x) in enumerate(zip(sample.z_true, sample.x_true), 1):
            save_tensor(z, path(f"z{i}_true"))
            save_tensor(x, path(f"x{i}_true"))
    else:
        save_tensor(sample.z_true, path("z_true"))
        save_tensor(sample.x_true, path("x_true"))
