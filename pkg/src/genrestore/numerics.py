"""Dense linear algebra, seeded random streams and stable reductions.

Vectors and matrices are plain ``float64`` numpy arrays. The pseudo-random
generator is numpy's PCG64 bit generator; Gaussian draws come from numpy's
ziggurat sampler (``Generator.standard_normal``). Worker ``i`` of a run
seeded with ``s`` uses the seed ``s ^ i``.
"""

import numpy as np
from scipy.linalg import cho_solve

from .errors import DimensionMismatch, NotSpd

JITTER_REL = 1e-12
JITTER_GROWTH = 10.0
JITTER_RETRIES = 3


def as_vector(x, name="vector"):
    """Return ``x`` as a finite, non-empty 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    if v.size == 0:
        raise DimensionMismatch(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def spd_solve(a, b):
    """Solve ``a @ x = b`` for symmetric positive (semi)definite ``a``.

    Plain Cholesky is tried first. On failure a diagonal jitter of
    ``1e-12 * trace(a) / n`` is added and grown tenfold per retry, at most
    three retries. A zero trace falls back to an absolute base of 1e-12.
    """
    a = as_matrix(a, "A")
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    if a.shape[1] != n:
        raise DimensionMismatch(f"A must be square, got {a.shape}")
    if b.shape[0] != n:
        raise DimensionMismatch(f"b has length {b.shape[0]}, A has {n} rows")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T)) > 1e-9 * max(scale, 1e-300):
        raise NotSpd("matrix is not symmetric")

    trace = float(np.trace(a))
    base = JITTER_REL * trace / n if trace > 0 else JITTER_REL
    jitters = [0.0] + [base * JITTER_GROWTH**k for k in range(JITTER_RETRIES)]
    for jitter in jitters:
        try:
            factor = np.linalg.cholesky(a + jitter * np.eye(n) if jitter else a)
        except np.linalg.LinAlgError:
            continue
        return cho_solve((factor, True), b)
    raise NotSpd(f"Cholesky failed after {JITTER_RETRIES} jitter retries "
                 f"(last jitter {jitters[-1]:.3e})")


class Prng:
    """Single-owner seeded stream (PCG64 + ziggurat normals)."""

    algorithm = "PCG64"

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, index):
        """Independent stream for worker/restart ``index``: seed ``s ^ index``."""
        return Prng(self.seed ^ int(index))

    @property
    def generator(self):
        return self._gen

    def __repr__(self):
        return f"Prng(seed={self.seed})"


def derive_seed(seed, index):
    return int(seed) ^ int(index)


def gaussian_vector(prng, n):
    if n < 1:
        raise ValueError("n must be >= 1")
    return prng.generator.standard_normal(int(n))


def log_sum_exp(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of empty sequence")
    m = np.max(v)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(v - m))))
