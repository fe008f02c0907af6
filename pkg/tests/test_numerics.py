import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genrestore.errors import DimensionMismatch, NotSpd
from genrestore.numerics import Prng, derive_seed, gaussian_vector, log_sum_exp, spd_solve


@pytest.mark.parametrize("a, b, expected", [
    (np.eye(2), [3.0, 4.0], [3.0, 4.0]),
    ([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0], [1.0, 2.0]),
])
def test_spd_solve_trivial(a, b, expected):
    np.testing.assert_allclose(spd_solve(a, b), expected, rtol=1e-14)


def test_spd_solve_matches_closed_form_2x2_inverse():
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    inv = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
    expected = inv @ np.array([1.0, 1.0])
    np.testing.assert_allclose(expected, [1 / 8, 1 / 4], rtol=1e-15)
    np.testing.assert_allclose(spd_solve(a, [1.0, 1.0]), expected, rtol=1e-13)


def test_spd_solve_random_instances(rng):
    for _ in range(100):
        n = rng.integers(1, 21)
        b_mat = rng.standard_normal((n, n))
        a = b_mat @ b_mat.T + np.eye(n)
        b = rng.standard_normal(n)
        x = spd_solve(a, b)
        assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) < 1e-8


def test_spd_solve_jitter_rescues_singular_gram():
    c = np.array([1.0, 2.0, 3.0])
    gram = np.outer([1, 1], [1, 1]) * (c @ c)  # two identical columns
    x = spd_solve(gram, np.array([c @ c, c @ c]))
    assert np.all(np.isfinite(x))
    np.testing.assert_allclose(gram @ x, [c @ c, c @ c], rtol=1e-6)


def test_spd_solve_zero_matrix_uses_absolute_jitter():
    np.testing.assert_array_equal(spd_solve(np.zeros((2, 2)), np.zeros(2)), [0.0, 0.0])


def test_spd_solve_errors():
    with pytest.raises(NotSpd):
        spd_solve([[1.0, 0.0], [0.0, -1.0]], [1.0, 1.0])
    with pytest.raises(NotSpd):
        spd_solve([[1.0, 0.5], [0.0, 1.0]], [1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        spd_solve(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatch):
        spd_solve(np.ones((2, 3)), [1.0, 2.0])


def test_gaussian_vector_is_reproducible():
    a = gaussian_vector(Prng(2024), 4)
    b = gaussian_vector(Prng(2024), 4)
    assert a.tobytes() == b.tobytes()
    p = Prng(7)
    first, second = gaussian_vector(p, 3), gaussian_vector(p, 3)
    assert not np.array_equal(first, second)


def test_gaussian_vector_moments():
    n = 10**6
    x = gaussian_vector(Prng(99), n)
    assert abs(x.mean()) < 4 / np.sqrt(n)
    assert abs(x.var() - 1.0) < 0.01


def test_spawn_follows_xor_rule():
    assert Prng(10).spawn(3).seed == 10 ^ 3 == derive_seed(10, 3)
    a = gaussian_vector(Prng(10).spawn(1), 5)
    b = gaussian_vector(Prng(10).spawn(2), 5)
    assert not np.allclose(a, b)


def test_log_sum_exp_examples():
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(np.log(2.0), abs=1e-15)
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + np.log(2.0), abs=1e-12)
    assert log_sum_exp([0.0, -np.inf]) == 0.0
    assert log_sum_exp([-np.inf, -np.inf]) == -np.inf


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=1, max_size=20), st.floats(-1e3, 1e3))
def test_log_sum_exp_shift(values, c):
    v = np.array(values)
    assert log_sum_exp(v + c) == pytest.approx(log_sum_exp(v) + c, abs=1e-12 * max(1, abs(c)) * 10)
