import numpy as np
import pytest

from rbcv import stats
from rbcv.errors import ConfigurationError, DomainError
from rbcv.families import (FamilySpec, default_dist, draw_family_batch,
                           draw_trial_set, eval_family, eval_matrix,
                           heat2d_z2_floor, make_family, testcase1_f,
                           testcase2_f)
from rbcv.fem import FemContext


# -- hat family (tc1) --------------------------------------------------------

def test_hat_branch_values():
    assert testcase1_f(0.25) == 0.5
    assert testcase1_f(1.75) == 0.5
    assert testcase1_f(5.0) == 0.0
    assert testcase1_f(1.0) == 1.0
    assert testcase1_f(-0.1) == 0.0


def test_hat_translation_exact():
    fam = make_family("tc1")
    batch = stats.draw_batch(default_dist(fam), 500, seed=3)
    for mu in (0.0, 0.7, 3.0, 4.0):
        vals = eval_family(fam, mu, batch)
        assert np.array_equal(vals, testcase1_f(batch.points[:, 0] - mu))


def test_hat_eval_examples():
    fam = make_family("tc1")
    batch = stats.SampleBatch(points=np.array([[1.0]]), seed=0, stream_id=0,
                              dist=stats.uniform(0, 5))
    assert eval_family(fam, 0.0, batch)[0] == 1.0
    batch2 = stats.SampleBatch(points=np.array([[0.2]]), seed=0, stream_id=0,
                               dist=stats.uniform(0, 5))
    assert eval_family(fam, 3.0, batch2)[0] == 0.0


def test_hat_bounded_on_dense_grid():
    vals = testcase1_f(np.linspace(-2, 6, 20001))
    assert vals.min() >= 0.0 and vals.max() <= 1.0


# -- kink family (tc2) -------------------------------------------------------

def test_kink_branch_values():
    assert testcase2_f(1.0, 0.4) == pytest.approx(np.sqrt(0.5))
    assert testcase2_f(0.0, 0.0) == pytest.approx(np.sqrt(0.1))
    expect = 0.5 * 0.35 ** -0.5 * 0.75 + 0.35 ** 0.5
    assert testcase2_f(0.25, 1.0) == pytest.approx(expect)


def test_kink_eval_example():
    fam = make_family("tc2")
    batch = stats.SampleBatch(points=np.array([[0.5]]), seed=0, stream_id=0,
                              dist=stats.uniform(0, 1))
    assert eval_family(fam, 0.5, batch)[0] == pytest.approx(np.sqrt(0.6))


def test_kink_domain_errors():
    with pytest.raises(DomainError):
        testcase2_f(1.5, 0.5)
    with pytest.raises(DomainError):
        testcase2_f(0.5, 1.5)


def test_kink_c1_at_the_kink():
    # value continuity O(h) and matching one-sided difference quotients
    for mu in (0.2, 0.5, 0.8):
        slope = 0.5 / np.sqrt(mu + 0.1)
        for h in (1e-3, 1e-4, 1e-5):
            gap = abs(testcase2_f(mu, mu + h) - testcase2_f(mu, mu - h))
            assert gap <= 4.0 * slope * h
            dplus = (testcase2_f(mu, mu + h) - testcase2_f(mu, mu)) / h
            dminus = (testcase2_f(mu, mu) - testcase2_f(mu, mu - h)) / h
            assert abs(dplus - slope) <= 2.0 * h
            assert abs(dminus - slope) <= 2.0 * h


def test_kink_bounded_on_dense_grid():
    lo, hi = np.sqrt(0.1), np.sqrt(1.1) + 0.5 * 0.1 ** -0.5
    for mu in np.linspace(0, 1, 101):
        vals = testcase2_f(float(mu), np.linspace(0, 1, 2001))
        assert vals.min() >= lo - 1e-12
        assert vals.max() <= hi + 1e-12


# -- family interface --------------------------------------------------------

def test_family_validation():
    with pytest.raises(ConfigurationError):
        make_family("nope")
    with pytest.raises(ConfigurationError):
        FamilySpec(kind="tc1", parameter_domain=(1.0, 1.0),
                   eval_domain=(0.0, 1.0), input_dim=1)


def test_eval_domain_enforced():
    fam = make_family("tc1")
    batch = stats.draw_batch(default_dist(fam), 4, seed=1)
    with pytest.raises(DomainError):
        eval_family(fam, 4.5, batch)   # test interval is [0, 4]


def test_dimension_mismatch_rejected():
    fam = make_family("tc1")
    batch = stats.draw_batch(stats.product_measure(
        stats.Uniform(0, 1), stats.Uniform(0, 1)), 4, seed=1)
    with pytest.raises(ConfigurationError):
        eval_family(fam, 0.5, batch)


def test_eval_matrix_shape():
    fam = make_family("tc2")
    batch = stats.draw_batch(default_dist(fam), 30, seed=2)
    em = eval_matrix(fam, [0.1, 0.5, 0.9], batch)
    assert em.values.shape == (3, 30)
    assert em.batch_tag == batch.tag


# -- trial sets ----------------------------------------------------------

def test_trial_set_sorted_in_domain_deterministic():
    fam = make_family("tc1")
    t1 = draw_trial_set(fam, 64, seed=9)
    t2 = draw_trial_set(fam, 64, seed=9)
    assert np.array_equal(t1.parameters, t2.parameters)
    assert np.all(np.diff(t1.parameters) >= 0)
    assert t1.parameters.min() >= 0.0 and t1.parameters.max() <= 3.0


# -- heat2d wiring ---------------------------------------------------------

def test_heat2d_family_needs_fem():
    with pytest.raises(ConfigurationError):
        FamilySpec(kind="heat2d", parameter_domain=(0.0, 10.0),
                   eval_domain=(0.0, 12.0), input_dim=2)


def test_heat2d_eval_finite_and_cached():
    fam = make_family("heat2d", fem=FemContext(4))
    dist = default_dist(fam)
    batch, redraws = draw_family_batch(fam, dist, 6, seed=5, stream_id=1)
    assert redraws == 0
    v1 = eval_family(fam, 3.0, batch)
    v2 = eval_family(fam, 3.0, batch)
    assert v1 is v2                      # served from the per-batch cache
    assert v1.shape == (6,)
    assert np.all(np.isfinite(v1))


def test_heat2d_admissibility_redraw():
    # raise the floor so the z2 bound bites visibly, then check the law cut
    fam = make_family("heat2d", fem=FemContext(4, ellipticity_floor=3.5))
    dist = default_dist(fam)
    z2_min = heat2d_z2_floor(fam)
    assert z2_min == pytest.approx(2.0 * (3.5 - 13.0 + 10.0))
    batch, redraws = draw_family_batch(fam, dist, 4000, seed=6, stream_id=1)
    assert redraws > 0
    assert batch.points[:, 1].min() > z2_min
    batch2, redraws2 = draw_family_batch(fam, dist, 4000, seed=6, stream_id=1)
    assert batch.points.tobytes() == batch2.points.tobytes()
    assert redraws == redraws2


def test_plain_families_never_redraw():
    fam = make_family("tc1")
    batch, redraws = draw_family_batch(fam, default_dist(fam), 100, seed=7,
                                       stream_id=1)
    direct = stats.draw_batch(default_dist(fam), 100, seed=7, stream_id=1)
    assert redraws == 0
    assert batch.points.tobytes() == direct.points.tobytes()
