"""Central finite-difference checks of every analytic objective gradient."""

from dataclasses import dataclass

import numpy as np

from . import estimators as est
from . import transforms as tf
from .generator import MlpGenerator, random_mlp
from .numerics import Prng, derive_seed, gaussian_vector

OBJECTIVES = ("fixed", "joint", "profiled", "discrete", "separation",
              "baseline", "baseline_separation")
TOLERANCES = {
    "fixed": 1e-5, "joint": 1e-5, "discrete": 1e-5, "baseline": 1e-5,
    "baseline_separation": 1e-5, "profiled": 1e-4, "separation": 1e-4,
}
KINK_MARGIN = 1e-4


def central_difference(f, x, step=1e-6):
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        out[i] = (f(xp) - f(xm)) / (2.0 * step)
    return out


def relative_error(g, g_ref):
    denom = max(np.linalg.norm(g), np.linalg.norm(g_ref), 1e-300)
    return float(np.linalg.norm(np.asarray(g) - np.asarray(g_ref)) / denom)


@dataclass
class CheckResult:
    objective: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def _away_from_kinks(g, z):
    if not isinstance(g, MlpGenerator):
        return True
    return all(np.min(np.abs(pre)) >= KINK_MARGIN
               for pre, layer in zip(g.pre_activations(z), g.layers)
               if layer.activation == "leaky_relu")


def _latent(prng, gens):
    """Latent draw(s) with every leaky-ReLU pre-activation clear of its kink."""
    while True:
        zs = [gaussian_vector(prng, g.input_dim) for g in gens]
        if all(_away_from_kinks(g, z) for g, z in zip(gens, zs)):
            return zs


def make_instance(kind, seed, latent_dim=8, shape=tf.ImageShape(8, 8, 3), hidden=(32, 64)):
    """Random instance of objective ``kind``.

    Returns ``(fun, x0)`` where ``fun(x)`` gives ``(value, flat_gradient)``.
    """
    prng = Prng(seed)
    rng = prng.generator
    n = shape.size
    g = random_mlp(latent_dim, n, hidden, slope=0.2, seed=derive_seed(seed, 1))

    if kind in ("separation", "baseline_separation"):
        g2 = random_mlp(latent_dim, n, hidden, slope=0.1, seed=derive_seed(seed, 2))
        y = rng.standard_normal(n)
        z1, z2 = _latent(prng, [g, g2])
        x0 = np.concatenate([z1, z2])
        d = latent_dim
        if kind == "separation":
            constraint = "sum_to_one" if seed % 2 else "none"

            def fun(x):
                v, a, b, _ = est.separation_objective(x[:d], x[d:], y, g, g2, constraint)
                return v, np.concatenate([a, b])
        else:
            alpha = rng.uniform(0.2, 0.8, 2)
            lam1, lam2 = rng.uniform(0.05, 1.0, 2)

            def fun(x):
                v, a, b = est.baseline_separation_objective(x[:d], x[d:], y, g, g2, alpha,
                                                            lam1, lam2)
                return v, np.concatenate([a, b])
        return fun, x0

    (z,) = _latent(prng, [g])
    if kind == "discrete":
        dset = tf.channel_set(shape)
        y = rng.standard_normal(shape.height * shape.width)
        return (lambda x: est.map_objective_discrete(x, y, g, dset)[:2]), z

    y = rng.standard_normal(n)
    kernel = rng.standard_normal(3)
    if kind == "fixed":
        t = tf.RowConv(kernel, shape)
        m = n + 1 if seed % 2 else n
        return (lambda x: est.map_objective_fixed(x, y, g, t, m)), z
    if kind == "baseline":
        t = tf.RowConv(kernel, shape)
        lam, power = rng.uniform(0.05, 1.0), 1 + seed % 2
        return (lambda x: est.baseline_objective(x, y, g, t, lam, power)), z
    family = tf.blur_family(3, shape)
    if kind == "profiled":
        return (lambda x: est.map_objective_profiled(x, y, g, family)[:2]), z
    if kind == "joint":
        d = latent_dim

        def fun(x):
            v, gz, ga = est.map_objective_joint(x[:d], x[d:], y, g, family)
            return v, np.concatenate([gz, ga])
        return fun, np.concatenate([z, kernel])
    raise ValueError(f"unknown objective {kind!r}")


def check_objective(kind, instances=50, seed=0, step=1e-6, **dims):
    worst = 0.0
    for i in range(instances):
        fun, x0 = make_instance(kind, derive_seed(seed, i), **dims)
        _, grad = fun(x0)
        fd = central_difference(lambda x: fun(x)[0], x0, step)
        worst = max(worst, relative_error(grad, fd))
    return CheckResult(kind, instances, worst, TOLERANCES[kind])


def run_checks(objectives=OBJECTIVES, instances=50, seed=0, step=1e-6, **dims):
    return [check_objective(k, instances, seed, step, **dims) for k in objectives]
