"""MAP / MMSE estimators of the generator latent under Gaussian noise.

With noise variance maximised out (or integrated out) the MAP problem becomes

    minimise  M * log ||Y - T(G(Z))||^2 + ||Z||^2,     M = N  or  N + 1

where N is the observation length. Unknown linear transform coefficients are
profiled out by least squares; because the profiled coefficients are an exact
inner minimiser, the gradient w.r.t. Z is the partial gradient at those
coefficients held fixed.

When the noise level ``beta`` is known the log data term is replaced by
``||r||^2 / beta^2``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import transforms as tf
from .errors import (AllWeightsZero, DegenerateFamily, DimensionMismatch, NotSpd,
                     ZeroResidual)
from .numerics import as_vector, gaussian_vector, log_sum_exp, spd_solve

ZERO_RESIDUAL_SQ = 1e-300
RESIDUAL_FLOOR = 1e-30
NEAR_MANIFOLD = 1e-12


# --- data term ---------------------------------------------------------------

def _fit_term(r, m, beta, clamp):
    """Value of the data term and its derivative w.r.t. ``||r||^2``."""
    r2 = float(r @ r)
    if beta is not None:
        inv = 1.0 / (beta * beta)
        return r2 * inv, inv
    if r2 < ZERO_RESIDUAL_SQ:
        if not clamp:
            raise ZeroResidual(r2)
        r2 = RESIDUAL_FLOOR
    return m * np.log(r2), m / r2


def _exponent(m, y):
    return len(y) if m is None else m


# --- least-squares profiling -------------------------------------------------

def profile_params_unconstrained(y, cols):
    """Least-squares coefficients of ``y`` on the columns of ``cols``.

    Returns ``(alpha_hat, residual_sq)`` with the projection-error form
    ``||y||^2 - y^T cols alpha_hat`` (clamped at zero).
    """
    cols = np.asarray(cols, dtype=np.float64)
    if cols.ndim != 2 or cols.shape[0] != len(y):
        raise DimensionMismatch(f"columns {cols.shape} do not match observation length {len(y)}")
    if cols.shape[1] > cols.shape[0]:
        raise DimensionMismatch("more coefficients than observations")
    rhs = cols.T @ y
    try:
        alpha = spd_solve(cols.T @ cols, rhs)
    except NotSpd as exc:
        raise DegenerateFamily(str(exc)) from exc
    residual_sq = float(y @ y - rhs @ alpha)
    return alpha, max(residual_sq, 0.0)


def profile_params_sum_constrained(y, cols):
    """Least squares subject to ``sum(alpha) == 1``.

    The last coefficient is eliminated, ``alpha_M = 1 - sum(alpha[:-1])``,
    which leaves an unconstrained problem on the target ``y - c_M`` and
    columns ``c_i - c_M``.
    """
    cols = np.asarray(cols, dtype=np.float64)
    if cols.ndim != 2 or cols.shape[1] < 2:
        raise DimensionMismatch("sum-to-one profiling needs at least two columns")
    last = cols[:, -1]
    head, residual_sq = profile_params_unconstrained(y - last, cols[:, :-1] - last[:, None])
    alpha = np.append(head, 1.0 - head.sum())
    return alpha, residual_sq


def profile_params(y, cols, constraint="none"):
    if constraint == "sum_to_one":
        return profile_params_sum_constrained(y, cols)
    return profile_params_unconstrained(y, cols)


def projection_residual(y, cols):
    """``||y||^2 - y^T C (C^T C)^{-1} C^T y`` computed literally."""
    rhs = cols.T @ y
    return float(y @ y - rhs @ np.linalg.solve(cols.T @ cols, rhs))


# --- MAP objectives ----------------------------------------------------------

def map_objective_fixed(z, y, g, t, m=None, *, beta=None, clamp=False):
    """Known transform. Returns ``(value, gradient)``."""
    m = _exponent(m, y)
    x, tape = g.forward_with_tape(z)
    r = y - t.apply(x)
    value, scale = _fit_term(r, m, beta, clamp)
    grad = -2.0 * scale * g.vjp_from_tape(tape, t.apply_adjoint(r)) + 2.0 * z
    return value + float(z @ z), grad


def map_objective_profiled(z, y, g, family, m=None, *, beta=None, clamp=False):
    """Transform coefficients profiled out. Returns ``(value, gradient, alpha_hat)``."""
    m = _exponent(m, y)
    x, tape = g.forward_with_tape(z)
    cols = family.columns(x)
    alpha, _ = profile_params(y, cols, family.constraint)
    r = y - cols @ alpha
    value, scale = _fit_term(r, m, beta, clamp)
    grad = -2.0 * scale * g.vjp_from_tape(tape, family.apply_adjoint(alpha, r)) + 2.0 * z
    return value + float(z @ z), grad, alpha


def map_objective_joint(z, alpha, y, g, family, m=None, *, beta=None, clamp=False):
    """Latent and coefficients as free variables. Returns ``(value, grad_z, grad_alpha)``.

    Under a sum-to-one constraint ``grad_alpha`` is projected onto the
    zero-sum subspace so descent steps stay feasible.
    """
    m = _exponent(m, y)
    alpha = np.asarray(alpha, dtype=np.float64)
    x, tape = g.forward_with_tape(z)
    cols = family.columns(x)
    r = y - cols @ alpha
    value, scale = _fit_term(r, m, beta, clamp)
    grad_z = -2.0 * scale * g.vjp_from_tape(tape, family.apply_adjoint(alpha, r)) + 2.0 * z
    grad_alpha = -2.0 * scale * (cols.T @ r)
    if family.constraint == "sum_to_one":
        grad_alpha = grad_alpha - grad_alpha.mean()
    return value + float(z @ z), grad_z, grad_alpha


def map_objective_discrete(z, y, g, dset, m=None, *, beta=None, clamp=False):
    """Unknown transform from a finite set. Returns ``(value, gradient, index)``.

    The branch with the smallest residual wins; ties go to the lowest index.
    """
    m = _exponent(m, y)
    x, tape = g.forward_with_tape(z)
    best, best_r2, best_r = 0, np.inf, None
    for i, t in enumerate(dset.candidates):
        r = y - t.apply(x)
        r2 = float(r @ r)
        if r2 < best_r2:
            best, best_r2, best_r = i, r2, r
    t = dset.candidates[best]
    value, scale = _fit_term(best_r, m, beta, clamp)
    grad = -2.0 * scale * g.vjp_from_tape(tape, t.apply_adjoint(best_r)) + 2.0 * z
    return value + float(z @ z), grad, best


def separation_objective(z1, z2, y, g1, g2, constraint="none", m=None, *,
                         alpha=None, beta=None, clamp=False):
    """Two-source mixture ``Y = a1 G1(Z1) + a2 G2(Z2) + W``.

    Mixing coefficients are profiled (optionally under ``a1 + a2 = 1``)
    unless ``alpha`` is given. Returns ``(value, grad1, grad2, alpha_hat)``.
    """
    if g1.output_dim != g2.output_dim:
        raise DimensionMismatch("both generators must produce the same length")
    m = _exponent(m, y)
    x1, tape1 = g1.forward_with_tape(z1)
    x2, tape2 = g2.forward_with_tape(z2)
    cols = np.column_stack([x1, x2])
    if alpha is None:
        alpha, _ = profile_params(y, cols, constraint)
    else:
        alpha = np.asarray(alpha, dtype=np.float64)
    r = y - cols @ alpha
    value, scale = _fit_term(r, m, beta, clamp)
    grad1 = -2.0 * scale * alpha[0] * g1.vjp_from_tape(tape1, r) + 2.0 * z1
    grad2 = -2.0 * scale * alpha[1] * g2.vjp_from_tape(tape2, r) + 2.0 * z2
    return value + float(z1 @ z1) + float(z2 @ z2), grad1, grad2, alpha


# --- tuned-weight baselines --------------------------------------------------

def baseline_objective(z, y, g, t, lam, power=2):
    """``||Y - T(G(Z))||^2 + lam * ||Z||^power`` for power 1 or 2."""
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    x, tape = g.forward_with_tape(z)
    r = y - t.apply(x)
    grad = -2.0 * g.vjp_from_tape(tape, t.apply_adjoint(r))
    if power == 2:
        return float(r @ r) + lam * float(z @ z), grad + 2.0 * lam * z
    nz = float(np.linalg.norm(z))
    if nz > 0:
        grad = grad + lam * z / nz
    return float(r @ r) + lam * nz, grad


def baseline_separation_objective(z1, z2, y, g1, g2, alpha, lam1, lam2):
    """Known-coefficient separation with squared-norm penalties.

    Returns ``(value, grad1, grad2)``.
    """
    x1, tape1 = g1.forward_with_tape(z1)
    x2, tape2 = g2.forward_with_tape(z2)
    r = y - alpha[0] * x1 - alpha[1] * x2
    value = float(r @ r) + lam1 * float(z1 @ z1) + lam2 * float(z2 @ z2)
    grad1 = -2.0 * alpha[0] * g1.vjp_from_tape(tape1, r) + 2.0 * lam1 * z1
    grad2 = -2.0 * alpha[1] * g2.vjp_from_tape(tape2, r) + 2.0 * lam2 * z2
    return value, grad1, grad2


# --- MMSE and noise level ----------------------------------------------------

@dataclass
class MmseResult:
    z_hat: np.ndarray
    effective_samples: float
    near_manifold: bool


def mmse_estimate(y, g, t, n_samples, prng, batch_size=65536):
    """Importance-weighted posterior mean of Z for a known transform.

    Draws ``Z_i ~ N(0, I)`` and weights each by ``||Y - T(G(Z_i))||^-(N+1)``;
    the weights are accumulated in the log domain batch by batch.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    y = as_vector(y, "Y")
    n, d = len(y), g.input_dim
    log_total = -np.inf
    weighted = np.zeros(d)
    sum_sq = 0.0  # sum of squared normalised weights, relative to exp(log_total)
    min_r2 = np.inf
    done = 0
    while done < n_samples:
        count = min(batch_size, n_samples - done)
        zs = gaussian_vector(prng, count * d).reshape(count, d)
        r = y - t.apply(g.forward(zs))
        r2 = np.einsum("ij,ij->i", r, r)
        min_r2 = min(min_r2, float(r2.min()))
        logw = -0.5 * (n + 1) * np.log(np.maximum(r2, ZERO_RESIDUAL_SQ))
        batch_log = log_sum_exp(logw)
        new_total = log_sum_exp([log_total, batch_log])
        if new_total == -np.inf:
            done += count
            continue
        w = np.exp(logw - new_total)
        keep = np.exp(log_total - new_total) if log_total > -np.inf else 0.0
        weighted = weighted * keep + w @ zs
        sum_sq = sum_sq * keep * keep + float(w @ w)
        log_total = new_total
        done += count
    if log_total == -np.inf:
        raise AllWeightsZero("every sample had infinite residual")
    return MmseResult(weighted, 1.0 / sum_sq, bool(min_r2 < NEAR_MANIFOLD**2))


def noise_variance_ml(residual, n=None):
    """Maximum-likelihood ``beta^2`` of i.i.d. Gaussian noise: ``||r||^2 / N``."""
    residual = np.asarray(residual, dtype=np.float64)
    n = residual.size if n is None else n
    if n < 1:
        raise ValueError("N must be >= 1")
    return float(residual @ residual) / n


# --- problems ----------------------------------------------------------------

@dataclass
class NoiseModel:
    """I.i.d. Gaussian noise; ``beta=None`` means the level is profiled.

    ``exponent_mode`` is ``"n"`` (maximise over beta) or ``"n+1"``
    (integrate beta out).
    """

    beta: float = None
    exponent_mode: str = "n"

    def __post_init__(self):
        if self.exponent_mode not in ("n", "n+1"):
            raise ValueError(f"exponent_mode must be 'n' or 'n+1', got {self.exponent_mode!r}")
        if self.beta is not None and not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError("known beta must be finite and positive")

    def exponent(self, n):
        return n + 1 if self.exponent_mode == "n+1" else n


@dataclass
class Mixture:
    """Two-source mixture; ``alpha=None`` means coefficients are unknown."""

    alpha: np.ndarray = None
    constraint: str = "none"


@dataclass
class Baseline:
    """Tuned-weight comparison objective (``lam`` is a pair for mixtures)."""

    lam: object
    power: int = 2


@dataclass
class RestorationResult:
    z_hat: object
    x_hat: object
    objective_final: float
    alpha_hat: np.ndarray = None
    beta2_hat: float = None
    chosen_index: int = None
    trace: object = None
    restart_index: int = 0
    zero_residual: bool = False
    candidates: list = field(default_factory=list)


class Problem:
    """Observation bound to generator(s), a transform and a noise model.

    ``mode`` follows from the transform: a fixed transform gives ``"fixed"``,
    a parametric family ``"profiled"`` (or ``"joint"`` when requested), a
    discrete set ``"discrete"`` and a :class:`Mixture` ``"separation"``.
    Supplying ``baseline`` swaps in the tuned-weight objective.

    Optimisation variables are packed into one flat vector; ``blocks`` gives
    the sizes of the pieces the optimiser normalises separately.
    """

    def __init__(self, y, generators, transform, noise=None, joint=False, baseline=None):
        self.y = as_vector(y, "Y")
        if not isinstance(generators, (list, tuple)):
            generators = [generators]
        self.generators = list(generators)
        self.transform = transform
        self.noise = noise or NoiseModel()
        self.baseline = baseline
        self.mode = self._infer_mode(joint)
        self._validate()
        self.m = self.noise.exponent(len(self.y))
        self.zero_residual_hits = 0
        self.degenerate_hits = 0

    def _infer_mode(self, joint):
        t = self.transform
        if isinstance(t, Mixture):
            mode = "separation"
        elif isinstance(t, tf.ParametricFamily):
            mode = "joint" if joint else "profiled"
        elif isinstance(t, tf.DiscreteSet):
            mode = "discrete"
        elif isinstance(t, tf.FixedTransform):
            mode = "fixed"
        else:
            raise TypeError(f"unsupported transform {type(t).__name__}")
        if self.baseline is not None:
            if mode == "separation" and t.alpha is None:
                raise ValueError("the separation baseline needs known coefficients")
            if mode not in ("fixed", "separation"):
                raise ValueError("baselines need a fully known transform")
        return mode

    def _validate(self):
        n = len(self.y)
        if self.mode == "separation":
            if len(self.generators) != 2:
                raise DimensionMismatch("separation needs exactly two generators")
            for g in self.generators:
                if g.output_dim != n:
                    raise DimensionMismatch(
                        f"generator output {g.output_dim} != observation length {n}")
            return
        if len(self.generators) != 1:
            raise DimensionMismatch("restoration takes exactly one generator")
        g, t = self.generators[0], self.transform
        if g.output_dim != t.in_dim:
            raise DimensionMismatch(f"generator output {g.output_dim} != transform input {t.in_dim}")
        if t.out_dim != n:
            raise DimensionMismatch(f"transform output {t.out_dim} != observation length {n}")

    # layout ------------------------------------------------------------------

    @property
    def latent_dims(self):
        return [g.input_dim for g in self.generators]

    @property
    def blocks(self):
        d = sum(self.latent_dims)
        if self.mode == "joint":
            return [d, self.transform.param_dim]
        return [d]

    @property
    def size(self):
        return sum(self.blocks)

    def split(self, x):
        """Unpack a flat variable into ``[Z]``, ``[Z, alpha]`` or ``[Z1, Z2]``."""
        if self.mode == "separation":
            d1 = self.latent_dims[0]
            return [x[:d1], x[d1:]]
        d = self.latent_dims[0]
        if self.mode == "joint":
            return [x[:d], x[d:]]
        return [x]

    def initial_point(self, prng):
        """``Z ~ N(0, I)``; in joint mode coefficients start at their profiled value."""
        z = gaussian_vector(prng, sum(self.latent_dims))
        if self.mode != "joint":
            return z
        g, fam = self.generators[0], self.transform
        alpha, _ = profile_params(self.y, fam.columns(g.forward(z)), fam.constraint)
        return np.concatenate([z, alpha])

    # evaluation --------------------------------------------------------------

    def evaluate(self, x, clamp=False):
        """Objective value, flat gradient and extras (alpha_hat / index)."""
        y, m, beta = self.y, self.m, self.noise.beta
        parts = self.split(x)
        if self.baseline is not None:
            return self._evaluate_baseline(parts)
        if self.mode == "fixed":
            v, g = map_objective_fixed(parts[0], y, self.generators[0], self.transform, m,
                                       beta=beta, clamp=clamp)
            return v, g, {}
        if self.mode == "profiled":
            v, g, a = map_objective_profiled(parts[0], y, self.generators[0], self.transform,
                                             m, beta=beta, clamp=clamp)
            return v, g, {"alpha": a}
        if self.mode == "joint":
            v, gz, ga = map_objective_joint(parts[0], parts[1], y, self.generators[0],
                                            self.transform, m, beta=beta, clamp=clamp)
            return v, np.concatenate([gz, ga]), {"alpha": parts[1].copy()}
        if self.mode == "discrete":
            v, g, i = map_objective_discrete(parts[0], y, self.generators[0], self.transform,
                                             m, beta=beta, clamp=clamp)
            return v, g, {"index": i}
        mix = self.transform
        v, g1, g2, a = separation_objective(parts[0], parts[1], y, *self.generators,
                                            mix.constraint, m, alpha=mix.alpha, beta=beta,
                                            clamp=clamp)
        return v, np.concatenate([g1, g2]), {"alpha": a}

    def _evaluate_baseline(self, parts):
        b = self.baseline
        if self.mode == "fixed":
            v, g = baseline_objective(parts[0], self.y, self.generators[0], self.transform,
                                      b.lam, b.power)
            return v, g, {}
        lam1, lam2 = np.broadcast_to(np.asarray(b.lam, dtype=float), (2,))
        v, g1, g2 = baseline_separation_objective(parts[0], parts[1], self.y, *self.generators,
                                                  self.transform.alpha, lam1, lam2)
        return v, np.concatenate([g1, g2]), {"alpha": np.asarray(self.transform.alpha, float)}

    def __call__(self, x):
        """``(value, gradient)`` for the optimiser; zero residuals are clamped and counted."""
        try:
            v, g, _ = self.evaluate(x)
        except ZeroResidual:
            self.zero_residual_hits += 1
            v, g, _ = self.evaluate(x, clamp=True)
        except DegenerateFamily:
            self.degenerate_hits += 1
            raise
        return v, g

    def restored(self, x):
        """Restoration outputs at ``x``: latent(s), signal(s), alpha, beta^2, index."""
        try:
            value, _, extra = self.evaluate(x)
            clamped = False
        except ZeroResidual:
            value, _, extra = self.evaluate(x, clamp=True)
            clamped = True
        parts = self.split(x)
        alpha = extra.get("alpha")
        index = extra.get("index")
        if self.mode == "separation":
            xs = [g.forward(z) for g, z in zip(self.generators, parts)]
            fit = alpha[0] * xs[0] + alpha[1] * xs[1]
            z_hat, x_hat = (parts[0].copy(), parts[1].copy()), tuple(xs)
        else:
            g, t = self.generators[0], self.transform
            z_hat = parts[0].copy()
            x_hat = g.forward(z_hat)
            if self.mode in ("profiled", "joint"):
                fit = t.apply(alpha, x_hat)
            elif self.mode == "discrete":
                fit = t.candidates[index].apply(x_hat)
            else:
                fit = t.apply(x_hat)
        beta2 = noise_variance_ml(self.y - fit, len(self.y))
        return RestorationResult(z_hat=z_hat, x_hat=x_hat, objective_final=float(value),
                                 alpha_hat=alpha, beta2_hat=beta2, chosen_index=index,
                                 zero_residual=clamped)
