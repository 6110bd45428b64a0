import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emolab.errors import DimensionError, InvalidInputError
from emolab.numerics import as_distribution, grad_check, log_softmax, one_hot, softmax

finite = st.floats(-50, 50, allow_nan=False)
logit_vectors = arrays(np.float64, st.integers(2, 12), elements=finite)


def test_softmax_frozen_values():
    # Reference values computed in 50-digit arithmetic.
    np.testing.assert_allclose(softmax([1.0, 2.0, 3.0]), [0.09003057317038046, 0.24472847105479764, 0.6652409557748219],
                               rtol=0, atol=1e-15)


def test_log_softmax_is_stable_for_large_gaps():
    out = log_softmax([-1000.0, 0.0])
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(-1000.0)
    assert out[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        softmax([0.0, np.nan])
    with pytest.raises(InvalidInputError):
        log_softmax([np.inf, 0.0])


@given(logit_vectors)
def test_softmax_is_a_distribution(z):
    p = softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12


@given(logit_vectors, st.floats(-100, 100))
def test_softmax_shift_invariance(z, c):
    np.testing.assert_allclose(softmax(z + c), softmax(z), atol=1e-12)


@given(logit_vectors)
def test_log_softmax_matches_log_of_softmax(z):
    p = softmax(z)
    keep = p > 1e-300
    np.testing.assert_allclose(log_softmax(z)[keep], np.log(p[keep]), rtol=1e-12, atol=1e-12)


def test_as_distribution_validates():
    with pytest.raises(InvalidInputError):
        as_distribution([0.5, 0.6])
    with pytest.raises(InvalidInputError):
        as_distribution([1.2, -0.2])
    with pytest.raises(DimensionError):
        as_distribution([[0.5, 0.5]])
    p = as_distribution([0.25, 0.75])
    assert not p.flags.writeable


def test_one_hot():
    np.testing.assert_array_equal(one_hot(1, 3), [0.0, 1.0, 0.0])
    with pytest.raises(InvalidInputError):
        one_hot(3, 3)


def test_grad_check_quadratic():
    err = grad_check(lambda x: float(np.sum(x**2)), lambda x: 2 * x, np.array([1.0, 2.0]), h=1e-5)
    assert err <= 1e-8


@settings(max_examples=50)
@given(arrays(np.float64, 4, elements=st.floats(-2, 2)), arrays(np.float64, (4, 4), elements=st.floats(-3, 3)),
       arrays(np.float64, 4, elements=st.floats(-3, 3)))
def test_grad_check_on_polynomials(x, A, b):
    # Away from vanishing gradient components; near them roundoff and
    # truncation dominate the relative measure (see the floor test below).
    f = lambda v: float(v @ A @ v + b @ v + v[0] ** 3 - 0.5 * v[1] ** 2 * v[2] + 1.5)
    g = lambda v: (A + A.T) @ v + b + np.array([3 * v[0] ** 2, -v[1] * v[2], -0.5 * v[1] ** 2, 0.0])
    assume(np.min(np.abs(g(x))) >= 0.1)
    assert grad_check(f, g, x, h=1e-5) <= 1e-7


def test_grad_check_cubic_truncation_floor():
    # The h^2 f'''/6 term of central differences is 1e-10 absolute at a
    # zero-gradient point of x^3, i.e. 1e-2 against the 1e-8 floor.
    err = grad_check(lambda v: float(v[0] ** 3), lambda v: 3 * v**2, np.zeros(1), h=1e-5)
    assert err == pytest.approx(1e-2, rel=1e-3)


def test_grad_check_detects_wrong_gradient():
    err = grad_check(lambda x: float(np.sum(x**2)), lambda x: x, np.array([1.0, 2.0]))
    assert err > 0.4


def test_grad_check_cross_entropy_composite(rng):
    z = rng.normal(size=8)
    f = lambda v: -log_softmax(v)[3]
    g = lambda v: softmax(v) - one_hot(3, 8)
    assert grad_check(f, g, z) <= 1e-6
