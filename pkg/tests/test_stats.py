import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from rbcv import stats
from rbcv.errors import ConfigurationError, DomainError, NumericalError

finite_rows = hst.lists(
    hst.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=1,
    max_size=40)


# -- distribution specs -----------------------------------------------------

def test_invalid_uniform_rejected():
    with pytest.raises(ConfigurationError):
        stats.uniform(1.0, 1.0)
    with pytest.raises(ConfigurationError):
        stats.uniform(2.0, 1.0)


def test_invalid_normal_rejected():
    with pytest.raises(ConfigurationError):
        stats.normal(0.0, 0.0)
    with pytest.raises(ConfigurationError):
        stats.normal(0.0, -1.0)


def test_dist_roundtrip():
    d = stats.product_measure(stats.Uniform(0.5, 2.0), stats.Normal(0.0, 1.0))
    assert stats.DistributionSpec.from_dict(d.to_dict()) == d
    assert d.d == 2


# -- sampling ---------------------------------------------------------------

def test_draw_batch_deterministic():
    a = stats.draw_batch(stats.uniform(0, 1), 4, seed=7)
    b = stats.draw_batch(stats.uniform(0, 1), 4, seed=7)
    assert a.points.tobytes() == b.points.tobytes()


def test_distinct_streams_differ():
    a = stats.draw_batch(stats.uniform(0, 1), 16, seed=7, stream_id=0)
    b = stats.draw_batch(stats.uniform(0, 1), 16, seed=7, stream_id=1)
    c = stats.draw_batch(stats.uniform(0, 1), 16, seed=8, stream_id=0)
    assert not np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_uniform_mean_within_clt_band():
    # 5 sigma band for the sample mean of U(0, 5)
    batch = stats.draw_batch(stats.uniform(0, 5), 10**5, seed=11)
    bound = 5.0 * (5.0 / np.sqrt(12.0)) / np.sqrt(10**5)
    assert abs(batch.points.mean() - 2.5) <= bound


def test_normal_variance_concentrates():
    batch = stats.draw_batch(stats.normal(0, 1), 10**5, seed=12)
    v = stats.empirical_var(batch.points[:, 0])
    assert 0.97 <= v <= 1.03


def test_normal_values_finite():
    batch = stats.draw_batch(stats.normal(3.0, 2.0), 50_000, seed=13)
    assert np.all(np.isfinite(batch.points))


def test_product_measure_columns():
    d = stats.product_measure(stats.Uniform(0.5, 2.0), stats.Normal(0.0, 1.0))
    batch = stats.draw_batch(d, 20_000, seed=14)
    z1, z2 = batch.points[:, 0], batch.points[:, 1]
    assert z1.min() >= 0.5 and z1.max() <= 2.0
    assert abs(z2.mean()) < 0.05


def test_batch_size_validation():
    with pytest.raises(ConfigurationError):
        stats.draw_batch(stats.uniform(0, 1), 0, seed=1)


# -- empirical moments ------------------------------------------------------

def test_mean_examples():
    assert stats.empirical_mean([1, 1, 1, 1]) == 1.0
    assert stats.empirical_mean([0, 2]) == 1.0
    assert stats.empirical_mean([-3, 1, 5]) == 1.0


def test_mean_empty_raises():
    with pytest.raises(DomainError):
        stats.empirical_mean([])


def test_cov_examples():
    assert stats.empirical_cov([1, 2, 3], [1, 2, 3]) == pytest.approx(2 / 3)
    assert stats.empirical_cov([5, -1, 7], [4, 4, 4]) == 0.0
    assert stats.empirical_cov([0, 1], [1, 0]) == -0.25


def test_cov_length_mismatch():
    with pytest.raises(DomainError):
        stats.empirical_cov([1, 2], [1, 2, 3])


def test_var_examples():
    assert stats.empirical_var([3, 3, 3]) == 0.0
    assert stats.empirical_var([0, 2]) == 1.0


def test_var_nan_raises():
    with pytest.raises(NumericalError):
        stats.empirical_var([1.0, float("nan")])


def test_cov_matches_textbook_formula_when_well_conditioned():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=31)
        b = rng.normal(size=31)
        textbook = np.mean(a * b) - np.mean(a) * np.mean(b)
        assert stats.empirical_cov(a, b) == pytest.approx(textbook, rel=1e-12,
                                                          abs=1e-14)


@given(finite_rows)
@settings(deadline=None, max_examples=60)
def test_cov_symmetric_exactly(row):
    rng = np.random.default_rng(1)
    other = rng.normal(size=len(row))
    assert stats.empirical_cov(row, other) == stats.empirical_cov(other, row)


@given(finite_rows, hst.floats(min_value=-1e6, max_value=1e6))
@settings(deadline=None, max_examples=60)
def test_var_shift_invariant(row, c):
    a = np.asarray(row, float)
    v0 = stats.empirical_var(a)
    v1 = stats.empirical_var(a + c)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(a)) ** 2)) if len(row) else 1e-10
    assert abs(v1 - v0) <= tol


@given(finite_rows)
@settings(deadline=None, max_examples=60)
def test_var_never_negative(row):
    assert stats.empirical_var(row) >= 0.0


def test_cov_bilinear():
    rng = np.random.default_rng(2)
    a, b, c = rng.normal(size=(3, 57))
    for alpha, beta in [(2.0, -3.0), (0.5, 0.25), (1e3, -1e-3)]:
        lhs = stats.empirical_cov(alpha * a + beta * b, c)
        rhs = alpha * stats.empirical_cov(a, c) + beta * stats.empirical_cov(b, c)
        scale = max(abs(lhs), abs(rhs), 1e-30)
        assert abs(lhs - rhs) / scale <= 1e-10


# -- gram matrix ------------------------------------------------------------

def _em(rows):
    return stats.EvalMatrix(values=np.asarray(rows, float), batch_tag=("t", 0, 0))


def test_gram_constant_row():
    assert stats.gram_matrix(_em([[4.0, 4.0, 4.0]])) == pytest.approx(np.zeros((1, 1)))


def test_gram_two_row_example():
    g = stats.gram_matrix(_em([[1.0, -1.0], [-1.0, 1.0]]))
    assert np.allclose(g, [[1.0, -1.0], [-1.0, 1.0]])


def test_gram_matches_bruteforce_double_loop():
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(3, 41))
    # independent oracle: scalar covariance in a double loop
    expect = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            expect[i, j] = stats.empirical_cov(rows[i], rows[j])
    g = stats.gram_matrix(_em(rows))
    assert np.allclose(g, expect, rtol=1e-12, atol=1e-14)


def test_gram_exactly_symmetric_and_psd():
    rng = np.random.default_rng(4)
    rows = rng.normal(size=(6, 23))
    g = stats.gram_matrix(_em(rows))
    assert np.array_equal(g, g.T)
    eigs = np.linalg.eigvalsh(g)
    assert eigs.min() >= -1e-8 * np.trace(g)


def test_eval_matrix_rejects_nonfinite():
    with pytest.raises(NumericalError):
        _em([[1.0, float("inf")]])


# -- vectorised helpers agree with the scalar ops ---------------------------

def test_vector_helpers_consistency():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 19))
    y = rng.normal(size=(3, 19))
    cc = stats.cross_covariance(x, y)
    for i in range(4):
        for j in range(3):
            assert cc[i, j] == pytest.approx(stats.empirical_cov(x[i], y[j]),
                                             rel=1e-12, abs=1e-14)
    cv = stats.cov_vector(x[0], y)
    assert np.allclose(cv, [stats.empirical_cov(x[0], r) for r in y])
    assert np.allclose(stats.row_variances(x),
                       [stats.empirical_var(r) for r in x])
