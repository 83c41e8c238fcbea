import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from didguard.core import (
    SeverityParams,
    ThetaEstimate,
    TimeLayout,
    ViolationMode,
    iterative_to_overall,
    overall_to_iterative,
    transform_theta_to_overall,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize(
    "r, delta",
    [([1, 2, 3], [1, 3, 6]), ([0, 0], [0, 0]), ([0.5, -0.5, 0.25], [0.5, 0.0, 0.25])],
)
def test_iterative_overall_examples(r, delta):
    np.testing.assert_array_equal(iterative_to_overall(r), delta)
    np.testing.assert_array_equal(overall_to_iterative(delta), r)


def test_single_entry_base_case():
    assert overall_to_iterative([4.2]).tolist() == [4.2]


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        iterative_to_overall([1.0, math.nan])
    with pytest.raises(ValueError):
        overall_to_iterative([math.inf])


@given(st.lists(finite, min_size=1, max_size=50))
@settings(max_examples=200)
def test_round_trip(r):
    back = overall_to_iterative(iterative_to_overall(r))
    scale = max(1.0, float(np.max(np.abs(np.cumsum(r)))))
    np.testing.assert_allclose(back, r, rtol=0, atol=1e-12 * scale)


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=50))
def test_round_trip_exact_for_integers(r):
    back = overall_to_iterative(iterative_to_overall(r))
    assert back.tolist() == [float(x) for x in r]


@given(st.integers(3, 200).flatmap(lambda T: st.tuples(st.just(T), st.integers(3, T))))
def test_theta_length_arithmetic(args):
    T, t0 = args
    layout = TimeLayout(T, t0)
    assert layout.t_pre + layout.t_post == T
    assert layout.t_pre >= 2 and layout.t_post >= 1
    assert (layout.t_pre - 1) + layout.t_post == layout.theta_length() == T - 1


@pytest.mark.parametrize("T, t0", [(3, 2), (4, 5), (2, 3)])
def test_layout_rejects_bad_treatment_time(T, t0):
    with pytest.raises(ValueError):
        TimeLayout(T, t0)


def test_severity_params_validation():
    assert SeverityParams(math.inf, 0.0).p == math.inf
    with pytest.raises(ValueError):
        SeverityParams(0.5, 1.0)
    with pytest.raises(ValueError):
        SeverityParams(2.0, -1.0)
    assert SeverityParams(2, 1, "overall").mode is ViolationMode.OVERALL


def test_theta_estimate_rejects_asymmetric_and_indefinite():
    layout = TimeLayout(3, 3)
    with pytest.raises(ValueError, match="symmetric"):
        ThetaEstimate(layout, [0, 0], [[1, 0.5], [0.0, 1]])
    with pytest.raises(ValueError, match="positive semi-definite"):
        ThetaEstimate(layout, [0, 0], [[1, 2], [2, 1]])
    with pytest.raises(ValueError):
        ThetaEstimate(layout, [0, 0, 0])


def test_transform_example():
    est = ThetaEstimate(TimeLayout(4, 4), [1.0, 2.0, 5.0], np.eye(3))
    out = transform_theta_to_overall(est)
    assert out.values.tolist() == [1.0, 3.0, 5.0]
    np.testing.assert_array_equal(out.covariance, [[1, 1, 0], [1, 2, 0], [0, 0, 1]])
    assert out.mode is ViolationMode.OVERALL


def test_transform_zero_covariance():
    est = ThetaEstimate(TimeLayout(4, 4), [1.0, 2.0, 5.0], np.zeros((3, 3)))
    np.testing.assert_array_equal(transform_theta_to_overall(est).covariance, np.zeros((3, 3)))


def test_transform_identity_when_single_pre_term():
    cov = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.5]])
    est = ThetaEstimate(TimeLayout(4, 3), [0.7, 1.0, 2.0], cov)
    out = transform_theta_to_overall(est)
    np.testing.assert_array_equal(out.values, est.values)
    np.testing.assert_array_equal(out.covariance, cov)


def test_transform_twice_is_an_error():
    est = transform_theta_to_overall(ThetaEstimate(TimeLayout(4, 4), [1.0, 2.0, 5.0]))
    with pytest.raises(ValueError):
        transform_theta_to_overall(est)


@given(st.integers(3, 8), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_transform_preserves_symmetry_and_psd(T, seed):
    rng = np.random.default_rng(seed)
    t0 = int(rng.integers(3, T + 1))
    layout = TimeLayout(T, t0)
    A = rng.normal(size=(T - 1, T - 2 if T > 3 else 1))
    cov = A @ A.T
    out = transform_theta_to_overall(ThetaEstimate(layout, rng.normal(size=T - 1), cov))
    np.testing.assert_allclose(out.covariance, out.covariance.T, atol=1e-10)
    eig = np.linalg.eigvalsh(out.covariance)
    assert eig[0] >= -1e-8 * max(eig[-1], 0)
