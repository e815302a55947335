"""Numeric kernel: softmax variants, loss, SGD, finite differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vkmn.kernel import (
    cross_entropy_loss,
    finite_diff_grad,
    hadamard,
    log_sum_exp,
    masked_softmax,
    matvec,
    max_relative_error,
    sgd_step,
    softmax,
    tanh_map,
)

finite_vecs = st.lists(
    st.floats(min_value=-50.0, max_value=50.0, allow_nan=False),
    min_size=1,
    max_size=12,
).map(lambda xs: np.asarray(xs, dtype=np.float64))


def test_softmax_oracle_values():
    # independent recomputation with math.exp, no max subtraction
    scores = [1.0, 2.0, 3.0]
    z = sum(math.exp(s) for s in scores)
    expected = np.array([math.exp(s) / z for s in scores])
    got = softmax(np.array(scores))
    assert np.max(np.abs(got - expected)) < 1e-8
    # frozen values for the canonical example
    assert abs(got[0] - 0.09003057317038046) < 1e-12
    assert abs(got[1] - 0.24472847105479767) < 1e-12
    assert abs(got[2] - 0.66524095577482183) < 1e-12


def test_softmax_overflow_safe():
    p = softmax(np.array([1000.0, 1000.0]))
    assert np.all(np.isfinite(p))
    assert abs(p[0] - 0.5) < 1e-12


@given(finite_vecs)
@settings(max_examples=200, deadline=None)
def test_softmax_is_distribution(v):
    p = softmax(v)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p > 0.0)
    assert np.all(p <= 1.0)


@given(finite_vecs, st.floats(min_value=-30.0, max_value=30.0))
@settings(max_examples=100, deadline=None)
def test_softmax_shift_invariance(v, c):
    assert np.max(np.abs(softmax(v) - softmax(v + c))) < 1e-12


def test_masked_softmax_excludes_before_exponentiation():
    # a huge masked score must not leak mass into the result
    scores = np.array([1.0, 2.0, 1e6])
    mask = np.array([True, True, False])
    p = masked_softmax(scores, mask)
    assert np.all(np.isfinite(p))
    assert p[2] == 0.0
    ref = softmax(np.array([1.0, 2.0]))
    assert abs(p[0] - ref[0]) < 1e-12
    assert abs(p[1] - ref[1]) < 1e-12


def test_masked_softmax_all_masked_raises():
    with pytest.raises(ValueError):
        masked_softmax(np.array([1.0, 2.0]), np.array([False, False]))


@given(
    st.integers(min_value=1, max_value=10).flatmap(
        lambda n: st.tuples(
            st.lists(
                st.floats(min_value=-50, max_value=50, allow_nan=False),
                min_size=n,
                max_size=n,
            ),
            st.lists(st.booleans(), min_size=n, max_size=n),
        )
    )
)
@settings(max_examples=200, deadline=None)
def test_masked_softmax_properties(pair):
    scores, mask = np.asarray(pair[0]), np.asarray(pair[1], dtype=bool)
    if not mask.any():
        with pytest.raises(ValueError):
            masked_softmax(scores, mask)
        return
    p = masked_softmax(scores, mask)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all(p[~mask] == 0.0)  # exact zeros, not tiny values
    assert np.all(p[mask] > 0.0)


def test_tanh_map_strictly_inside_unit_interval():
    x = tanh_map(np.array([1e9, -1e9, 0.0]))
    assert x[0] < 1.0
    assert x[1] > -1.0
    assert x[2] == 0.0


@given(finite_vecs)
@settings(max_examples=200, deadline=None)
def test_tanh_map_bounds(v):
    x = tanh_map(v)
    assert np.all(np.abs(x) < 1.0)


def test_tanh_map_preserves_matrix_shape():
    m = np.arange(6.0).reshape(2, 3)
    assert tanh_map(m).shape == (2, 3)


def test_hadamard_oracle():
    out = hadamard(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert np.array_equal(out, np.array([3.0, 8.0]))
    with pytest.raises(ValueError):
        hadamard(np.array([1.0]), np.array([1.0, 2.0]))


def test_matvec_oracle():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    v = np.array([1.0, 1.0])
    assert np.array_equal(matvec(m, v), np.array([3.0, 7.0]))


def test_log_sum_exp_stable():
    assert abs(log_sum_exp(np.array([1000.0, 1000.0])) - (1000.0 + math.log(2.0))) < 1e-9


def test_cross_entropy_matches_log_softmax():
    logits = np.array([0.0, 0.0])
    assert abs(cross_entropy_loss(logits, 0) - math.log(2.0)) < 1e-12
    logits = np.array([2.0, -1.0, 0.5])
    for k in range(3):
        fused = cross_entropy_loss(logits, k)
        naive = -math.log(softmax(logits)[k])
        assert abs(fused - naive) < 1e-10


def test_cross_entropy_label_out_of_range():
    with pytest.raises((IndexError, ValueError)):
        cross_entropy_loss(np.array([0.0, 1.0]), 5)


def test_sgd_step_in_place():
    params = {"w": np.array([1.0, 2.0])}
    grads = {"w": np.array([0.5, -1.0])}
    ref = params["w"]
    sgd_step(params, grads, lr=0.1)
    assert params["w"] is ref  # updated in place, not replaced
    assert np.allclose(params["w"], [0.95, 2.1])
    sgd_step(params, grads, lr=0.0)
    assert np.allclose(params["w"], [0.95, 2.1])


def test_finite_diff_grad_quadratic():
    # f(x) = sum(c * x^2) has exact gradient 2*c*x
    c = np.array([1.0, 2.0, 3.0])
    params = {"x": np.array([0.3, -0.7, 1.1])}
    before = params["x"].copy()

    def loss(ps):
        return float(np.sum(c * ps["x"] ** 2))

    num = finite_diff_grad(loss, params)
    assert np.max(np.abs(num["x"] - 2.0 * c * params["x"])) < 1e-6
    assert np.array_equal(params["x"], before)  # params restored


def test_max_relative_error_known_value():
    a = {"w": np.array([1.0, 0.0])}
    b = {"w": np.array([1.0, 0.0])}
    assert max_relative_error(a, b) == 0.0
    b = {"w": np.array([1.1, 0.0])}
    err = max_relative_error(a, b)
    assert abs(err - 0.1 / 2.1) < 1e-12
