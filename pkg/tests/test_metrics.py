import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from streamrom.metrics import eps_abs, eps_l2, eps_nrms, eps_rel, error_curves, write_error_csv


def test_identical_fields_give_zero():
    u = np.random.default_rng(0).normal(size=20)
    np.testing.assert_array_equal(eps_abs(u, u), 0.0)
    assert eps_rel(u, u) == 0.0 and eps_nrms(u, u) == 0.0 and eps_l2(u, u) == 0.0


def test_trivial_examples():
    np.testing.assert_array_equal(eps_abs([1.0, 2.0], [1.0, 1.0]), [0.0, 1.0])
    assert eps_rel([1.0, 2.0], [1.0, 1.0]) == 1 / 3
    assert eps_nrms([0.0, 2.0], [1.0, 1.0]) == 0.5
    assert eps_l2([3.0, 4.0], [0.0, 0.0]) == 1.0


def test_abs_matches_elementwise_oracle():
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=50), rng.normal(size=50)
    np.testing.assert_array_equal(eps_abs(u, v), [abs(a - b) for a, b in zip(u, v)])


def test_vector_field_uses_node_magnitude():
    u = np.array([[3.0, 4.0], [0.0, 1.0]])
    v = np.zeros((2, 2))
    np.testing.assert_array_equal(eps_abs(u, v), [5.0, 1.0])
    assert eps_rel(u, v) == 1.0


def test_errors():
    with pytest.raises(ValueError):
        eps_abs([1.0], [1.0, 2.0])
    with pytest.raises(ZeroDivisionError):
        eps_rel([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ZeroDivisionError):
        eps_nrms([2.0, 2.0], [1.0, 1.0])
    with pytest.raises(ZeroDivisionError):
        eps_l2([0.0, 0.0], [1.0, 0.0])


def test_nonzero_for_distinct_fields():
    u = np.array([1.0, 2.0, 3.0])
    v = u.copy()
    v[1] += 1e-9
    assert eps_rel(u, v) > 0 and eps_nrms(u, v) > 0 and eps_l2(u, v) > 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-3, 1e3), st.booleans(), st.floats(-1e3, 1e3))
def test_scale_and_shift_invariance(seed, scale, negate, shift):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=30), rng.normal(size=30)
    c = -scale if negate else scale
    assert math.isclose(eps_rel(c * u, c * v), eps_rel(u, v), rel_tol=1e-12)
    assert math.isclose(eps_l2(c * u, c * v), eps_l2(u, v), rel_tol=1e-12)
    # the shift cancels in the differences and the range, up to roundoff in u + shift
    tol = 1e-12 * max(1.0, abs(shift))
    assert abs(eps_nrms(u + shift, v + shift) - eps_nrms(u, v)) <= tol


def test_error_curves_and_csv(tmp_path):
    rng = np.random.default_rng(2)
    truth = rng.normal(size=(4, 10))
    pred = truth + 0.1 * rng.normal(size=(4, 10))
    times = np.array([0.1, 0.2, 0.3, 0.4])
    rep = error_curves(truth, pred, times)
    assert rep.eps_abs.shape == (4, 10)
    for k in range(4):
        assert rep.eps_rel[k] == eps_rel(truth[k], pred[k])
        assert rep.eps_nrms[k] == eps_nrms(truth[k], pred[k])
    assert rep.at(0.21)["t"] == 0.2
    write_error_csv(rep, tmp_path / "e.csv")
    rows = list(csv.DictReader(open(tmp_path / "e.csv")))
    assert list(rows[0]) == ["t", "eps_rel", "eps_nrms"]
    assert [float(r["eps_rel"]) for r in rows] == list(rep.eps_rel)
    with pytest.raises(ValueError):
        error_curves(truth, pred, times[:3])
