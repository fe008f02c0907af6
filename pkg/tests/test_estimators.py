import numpy as np
import pytest
from scipy import integrate, optimize

from genrestore import estimators as est
from genrestore import transforms as tf
from genrestore.errors import ZeroResidual
from genrestore.generator import LinearGenerator, random_linear, random_mlp
from genrestore.gradcheck import TOLERANCES, central_difference, make_instance, relative_error
from genrestore.numerics import Prng


def _identity2():
    return LinearGenerator(np.eye(2), np.zeros(2))


# --- fixed objective ---------------------------------------------------------

def test_fixed_zero_residual_path():
    with pytest.raises(ZeroResidual):
        est.map_objective_fixed(np.array([2.0, 0.0]), np.array([2.0, 0.0]), _identity2(),
                                tf.identity(2), 2)
    v, _ = est.map_objective_fixed(np.array([2.0, 0.0]), np.array([2.0, 0.0]), _identity2(),
                                   tf.identity(2), 2, clamp=True)
    assert v == pytest.approx(2 * np.log(est.RESIDUAL_FLOOR) + 4.0)


def test_fixed_direct_substitution():
    v, g = est.map_objective_fixed(np.array([1.0, 0.0]), np.array([2.0, 0.0]), _identity2(),
                                   tf.identity(2), 2)
    assert v == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(g, [-2.0, 0.0], atol=1e-15)


def test_fixed_defaults_to_n_and_known_beta():
    y, z = np.array([3.0, 1.0]), np.array([1.0, 0.5])
    v, _ = est.map_objective_fixed(z, y, _identity2(), tf.identity(2))
    assert v == pytest.approx(2 * np.log(4.0 + 0.25) + 1.25)
    v, g = est.map_objective_fixed(z, y, _identity2(), tf.identity(2), beta=0.5)
    assert v == pytest.approx(4.25 / 0.25 + 1.25)
    np.testing.assert_allclose(g, -2 * (y - z) / 0.25 + 2 * z)


@pytest.mark.parametrize("kind", ["fixed", "profiled", "joint", "discrete", "separation",
                                  "baseline", "baseline_separation"])
def test_gradients_match_finite_differences(kind):
    for seed in range(10):
        fun, x0 = make_instance(kind, seed, latent_dim=6, shape=tf.ImageShape(4, 4, 3),
                                hidden=(16,))
        fd = central_difference(lambda x: fun(x)[0], x0)
        assert relative_error(fun(x0)[1], fd) < TOLERANCES[kind]


# --- profiling ---------------------------------------------------------------

C2 = np.array([[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]])


def test_profile_in_span():
    a, r = est.profile_params_unconstrained(np.array([1.0, 2.0, 3.0]), C2)
    np.testing.assert_allclose(a, [0.0, 1.0], atol=1e-12)
    assert r == pytest.approx(0.0, abs=1e-12)


def test_profile_orthogonal():
    a, r = est.profile_params_unconstrained(np.array([1.0, 0.0]), np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(a, [0.0], atol=1e-15)
    assert r == pytest.approx(1.0)


def test_profile_normal_equations_example():
    y = np.array([1.0, 0.0, 0.0])
    # independent closed-form 2x2 solve of the normal equations
    g = C2.T @ C2
    rhs = C2.T @ y
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    expected = np.array([g[1, 1] * rhs[0] - g[0, 1] * rhs[1],
                         g[0, 0] * rhs[1] - g[0, 1] * rhs[0]]) / det
    np.testing.assert_allclose(expected, [4 / 3, -1 / 2], rtol=1e-14)
    a, r = est.profile_params_unconstrained(y, C2)
    np.testing.assert_allclose(a, expected, rtol=1e-12)
    assert r == pytest.approx(1 / 6, rel=1e-12)


def test_projection_formula_equals_direct_residual(rng):
    for _ in range(200):
        n, m = rng.integers(3, 30), rng.integers(1, 4)
        cols, y = rng.standard_normal((n, m)), rng.standard_normal(n)
        a, r = est.profile_params_unconstrained(y, cols)
        direct = float(np.sum((y - cols @ a) ** 2))
        assert abs(r - direct) <= 1e-9 * max(direct, 1e-300) + 1e-12 * (y @ y)
        assert est.projection_residual(y, cols) == pytest.approx(direct, rel=1e-9)


def test_sum_constrained_exact_representation(rng):
    cols = rng.standard_normal((6, 2))
    a, r = est.profile_params_sum_constrained(cols[:, 0].copy(), cols)
    np.testing.assert_allclose(a, [1.0, 0.0], atol=1e-12)
    assert r == pytest.approx(0.0, abs=1e-12)


def test_sum_constrained_collinear_columns(rng):
    c = rng.standard_normal(5)
    y = rng.standard_normal(5)
    a, r = est.profile_params_sum_constrained(y, np.column_stack([c, c]))
    assert abs(a.sum() - 1.0) < 1e-12
    assert r == pytest.approx(float(np.sum((y - c) ** 2)), rel=1e-9)


def test_sum_constrained_matches_grid_search():
    rng = np.random.default_rng(5)
    cols, y = rng.standard_normal((5, 2)), rng.standard_normal(5)
    a, r = est.profile_params_sum_constrained(y, cols)
    grid = np.arange(-30000, 30001) * 1e-4
    fits = np.outer(cols[:, 0], grid) + np.outer(cols[:, 1], 1 - grid)
    sse = np.sum((y[:, None] - fits) ** 2, axis=0)
    best = grid[np.argmin(sse)]
    assert -3 < a[0] < 3
    assert abs(a[0] - best) <= 1e-4
    assert abs(a.sum() - 1.0) < 1e-12
    assert r <= sse.min() + 1e-12


# --- profiled / joint --------------------------------------------------------

def test_profiled_identity_family_closed_form(rng):
    g = random_mlp(4, 12, hidden=(8,), seed=1)
    fam = tf.ParametricFamily([tf.identity(12)])
    y, z = rng.standard_normal(12), rng.standard_normal(4)
    x = g.forward(z)
    expected = 12 * np.log(y @ y - (y @ x) ** 2 / (x @ x)) + z @ z
    v, _, a = est.map_objective_profiled(z, y, g, fam)
    assert v == pytest.approx(expected, rel=1e-12)
    assert a[0] == pytest.approx((y @ x) / (x @ x))


def test_profiled_equals_fixed_with_frozen_coefficients(shape, rng):
    g = random_mlp(5, shape.size, hidden=(16,), seed=2)
    fam = tf.blur_family(3, shape)
    y, z = rng.standard_normal(shape.size), rng.standard_normal(5)
    v, grad, a = est.map_objective_profiled(z, y, g, fam)
    v2, grad2 = est.map_objective_fixed(z, y, g, tf.FrozenFamily(fam, a))
    assert v == pytest.approx(v2, rel=1e-12)
    np.testing.assert_allclose(grad, grad2, rtol=1e-10)


def test_joint_consistency_and_optimality(shape, rng):
    g = random_mlp(5, shape.size, hidden=(16,), seed=3)
    for constraint in ("none", "sum_to_one"):
        fam = tf.ParametricFamily(tf.blur_family(3, shape).basis, constraint)
        y, z = rng.standard_normal(shape.size), rng.standard_normal(5)
        v, _, a = est.map_objective_profiled(z, y, g, fam)
        vj, _, ga = est.map_objective_joint(z, a, y, g, fam)
        assert vj == pytest.approx(v, rel=1e-12)
        _, _, ga_scale = est.map_objective_joint(z, a + 1.0, y, g, fam)
        assert np.linalg.norm(ga) < 1e-8 * np.linalg.norm(ga_scale)
        for _ in range(20):
            probe = a + rng.standard_normal(3)
            if constraint == "sum_to_one":
                probe[-1] = 1 - probe[:-1].sum()
            assert v <= est.map_objective_joint(z, probe, y, g, fam)[0] + 1e-12


# --- discrete ----------------------------------------------------------------

def test_discrete_two_candidate_logic():
    dset = tf.DiscreteSet([tf.identity(2), tf.GeneralMatrix(np.zeros((2, 2)))])
    y = np.array([1.0, 1.0])
    near = np.array([0.9, 0.9])
    assert est.map_objective_discrete(near, y, _identity2(), dset)[2] == 0
    far = np.array([-3.0, 2.0])
    assert est.map_objective_discrete(far, y, _identity2(), dset)[2] == 1


def test_discrete_tie_goes_to_lowest_index():
    dset = tf.DiscreteSet([tf.identity(2), tf.identity(2)])
    assert est.map_objective_discrete(np.zeros(2), np.ones(2), _identity2(), dset)[2] == 0


def test_discrete_singleton_equals_fixed(rng):
    g = random_mlp(3, 6, hidden=(5,), seed=0)
    t = tf.GeneralMatrix(rng.standard_normal((4, 6)))
    y, z = rng.standard_normal(4), rng.standard_normal(3)
    v, grad, i = est.map_objective_discrete(z, y, g, tf.DiscreteSet([t]))
    v2, grad2 = est.map_objective_fixed(z, y, g, t)
    assert (v, i) == (v2, 0)
    np.testing.assert_array_equal(grad, grad2)


def test_discrete_matches_exhaustive_search(shape):
    g = random_mlp(4, shape.size, hidden=(16,), seed=4)
    dset = tf.channel_set(shape)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        z_true, ch = rng.standard_normal(4), seed % 3
        y = dset.candidates[ch].apply(g.forward(z_true)) + 0.01 * rng.standard_normal(64)
        z = z_true + 0.1 * rng.standard_normal(4)
        v, _, i = est.map_objective_discrete(z, y, g, dset)
        fixed = [est.map_objective_fixed(z, y, g, t)[0] for t in dset.candidates]
        assert i == int(np.argmin(fixed)) == ch
        assert all(v <= f for f in fixed)


# --- separation --------------------------------------------------------------

def _unit_generators(n=4):
    e = np.eye(n)
    return (LinearGenerator(e[:, [0]], np.zeros(n)), LinearGenerator(e[:, [1]], np.zeros(n)))


def test_separation_equal_mixture():
    g1, g2 = _unit_generators()
    y = np.array([0.5, 0.5, 0.0, 0.0])
    with pytest.raises(ZeroResidual):
        est.separation_objective(np.ones(1), np.ones(1), y, g1, g2)
    *_, a = est.separation_objective(np.ones(1), np.ones(1), y, g1, g2, clamp=True)
    np.testing.assert_allclose(a, [0.5, 0.5], atol=1e-12)


def test_separation_sum_constrained_recovery():
    g1, g2 = _unit_generators()
    y = np.array([0.6, 0.4, 0.0, 0.0])
    *_, a = est.separation_objective(np.ones(1), np.ones(1), y, g1, g2, "sum_to_one",
                                     clamp=True)
    np.testing.assert_allclose(a, [0.6, 0.4], atol=1e-12)
    assert abs(a.sum() - 1) < 1e-12


def test_separation_matches_grid_search():
    rng = np.random.default_rng(11)
    g1, g2 = random_linear(2, 5, seed=1), random_linear(2, 5, seed=2)
    z1, z2 = rng.standard_normal(2), rng.standard_normal(2)
    x1, x2 = g1.forward(z1), g2.forward(z2)
    y = 0.3 * x1 + 0.8 * x2 + 0.05 * rng.standard_normal(5)
    *_, a = est.separation_objective(z1, z2, y, g1, g2)
    grid = np.arange(-500, 1501) * 1e-3
    a1, a2 = np.meshgrid(grid, grid, indexing="ij")
    fit = a1[..., None] * x1 + a2[..., None] * x2
    sse = np.sum((y - fit) ** 2, axis=-1)
    i, j = np.unravel_index(np.argmin(sse), sse.shape)
    assert abs(a[0] - grid[i]) <= 1e-3 and abs(a[1] - grid[j]) <= 1e-3


def test_separation_known_alpha_is_used(rng):
    g1, g2 = random_linear(2, 5, seed=1), random_linear(2, 5, seed=2)
    z1, z2, y = rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal(5)
    v, *_, a = est.separation_objective(z1, z2, y, g1, g2, alpha=[0.2, 0.7])
    r = y - 0.2 * g1(z1) - 0.7 * g2(z2)
    assert v == pytest.approx(5 * np.log(r @ r) + z1 @ z1 + z2 @ z2)
    np.testing.assert_array_equal(a, [0.2, 0.7])


# --- baselines ---------------------------------------------------------------

def test_baseline_lambda_zero_is_pure_fit(rng):
    g = random_mlp(3, 6, hidden=(5,), seed=0)
    t = tf.identity(6)
    y, z = rng.standard_normal(6), rng.standard_normal(3)
    r = y - g.forward(z)
    for power in (1, 2):
        assert est.baseline_objective(z, y, g, t, 0.0, power)[0] == pytest.approx(r @ r)


def test_baseline_penalties(rng):
    g = random_mlp(3, 6, hidden=(5,), seed=0)
    y, z = rng.standard_normal(6), rng.standard_normal(3)
    fit = est.baseline_objective(z, y, g, tf.identity(6), 0.0)[0]
    assert est.baseline_objective(z, y, g, tf.identity(6), 0.6, 1)[0] == pytest.approx(
        fit + 0.6 * np.linalg.norm(z))
    assert est.baseline_objective(z, y, g, tf.identity(6), 0.2, 2)[0] == pytest.approx(
        fit + 0.2 * z @ z)
    _, grad0 = est.baseline_objective(np.zeros(3), y, g, tf.identity(6), 0.6, 1)
    _, grad_fit = est.baseline_objective(np.zeros(3), y, g, tf.identity(6), 0.0, 1)
    np.testing.assert_array_equal(grad0, grad_fit)


@pytest.mark.parametrize("lam", [0.3, 0.1])
def test_baseline_separation_value(lam, rng):
    g1, g2 = random_linear(2, 5, seed=1), random_linear(2, 5, seed=2)
    z1, z2, y = rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal(5)
    v, *_ = est.baseline_separation_objective(z1, z2, y, g1, g2, [0.6, 0.4], lam, lam)
    r = y - 0.6 * g1(z1) - 0.4 * g2(z2)
    assert v == pytest.approx(r @ r + lam * (z1 @ z1 + z2 @ z2))


# --- MMSE --------------------------------------------------------------------

def test_mmse_single_sample_returns_it():
    g = LinearGenerator([[1.0], [1.0], [0.0]], np.zeros(3))
    res = est.mmse_estimate(np.ones(3), g, tf.identity(3), 1, Prng(4))
    z1 = Prng(4).generator.standard_normal(1)
    np.testing.assert_array_equal(res.z_hat, z1)
    assert res.effective_samples == pytest.approx(1.0)


def test_mmse_symmetric_problem_is_near_zero():
    g = LinearGenerator([[1.0], [0.0], [0.0]], np.zeros(3))
    res = est.mmse_estimate(np.array([0.0, 1.0, 1.0]), g, tf.identity(3), 200_000, Prng(8))
    assert abs(res.z_hat[0]) < 0.01
    assert not res.near_manifold


def _quadrature_posterior_mean(a, y):
    z = np.linspace(-8, 8, 100_001)
    r2 = np.sum((y[:, None] - np.outer(a, z)) ** 2, axis=0)
    w = r2 ** (-(len(y) + 1) / 2) * np.exp(-z * z / 2)
    return integrate.simpson(z * w, x=z) / integrate.simpson(w, x=z)


def test_mmse_matches_quadrature_small():
    a = np.array([1.0, 1.0, 0.0])
    y = np.array([1.0, 1.0, 1.0])
    g = LinearGenerator(a[:, None], np.zeros(3))
    ref = _quadrature_posterior_mean(a, y)
    res = est.mmse_estimate(y, g, tf.identity(3), 200_000, Prng(1), batch_size=30_000)
    assert abs(res.z_hat[0] - ref) < 0.02 * abs(ref)


def test_mmse_batching_does_not_change_result():
    g = LinearGenerator([[1.0], [1.0], [0.0]], np.zeros(3))
    y = np.ones(3)
    a = est.mmse_estimate(y, g, tf.identity(3), 5000, Prng(2), batch_size=5000)
    b = est.mmse_estimate(y, g, tf.identity(3), 5000, Prng(2), batch_size=777)
    np.testing.assert_allclose(a.z_hat, b.z_hat, rtol=1e-12)


def test_mmse_flags_near_manifold():
    g = LinearGenerator(np.eye(2), np.zeros(2))
    z = Prng(3).generator.standard_normal(2)
    res = est.mmse_estimate(z, g, tf.identity(2), 10, Prng(3))
    assert res.near_manifold
    np.testing.assert_allclose(res.z_hat, z)


# --- noise variance ----------------------------------------------------------

def test_noise_variance_examples():
    assert est.noise_variance_ml([3.0, 4.0], 2) == 12.5
    assert est.noise_variance_ml(np.zeros(5)) == 0.0


def test_noise_variance_matches_likelihood_search(rng):
    r = 0.3 * rng.standard_normal(50)
    n = r.size

    def negloglik(beta):
        return n * np.log(beta) + (r @ r) / (2 * beta * beta)

    best = optimize.minimize_scalar(negloglik, bracket=(0.01, 0.2, 5.0), method="golden",
                                    tol=1e-12)
    assert est.noise_variance_ml(r, n) == pytest.approx(best.x ** 2, rel=1e-6)
    assert est.noise_variance_ml(r, n) * n == r @ r


# --- problem wrapper ---------------------------------------------------------

def test_problem_modes_and_validation(shape):
    g = random_mlp(4, shape.size, seed=0)
    y = np.zeros(shape.size)
    assert est.Problem(y, g, tf.identity(shape.size)).mode == "fixed"
    assert est.Problem(y, g, tf.blur_family(3, shape)).mode == "profiled"
    assert est.Problem(y, g, tf.blur_family(3, shape), joint=True).blocks == [4, 3]
    assert est.Problem(y[:64], g, tf.channel_set(shape)).mode == "discrete"
    assert est.Problem(y, [g, g], est.Mixture()).mode == "separation"
    with pytest.raises(Exception):
        est.Problem(y[:10], g, tf.identity(shape.size))
    with pytest.raises(ValueError):
        est.Problem(y, g, tf.blur_family(3, shape), baseline=est.Baseline(0.1))


def test_problem_clamps_zero_residual_and_counts():
    g = _identity2()
    p = est.Problem(np.array([1.0, 2.0]), g, tf.identity(2))
    v, _ = p(np.array([1.0, 2.0]))
    assert p.zero_residual_hits == 1 and np.isfinite(v)
    res = p.restored(np.array([1.0, 2.0]))
    assert res.zero_residual and res.beta2_hat == 0.0
