import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_margin.dataset import Dataset, Uniform, assign_budgets, generate_gaussian
from robust_margin.loss import (
    DomainError,
    inner_max_oracle,
    logistic,
    max_step_size,
    robust_loss,
    robust_loss_gradient,
    robust_margins,
    spectral_norm,
)

from conftest import budgeted_instance

SPEC = logistic()


def test_logistic_values_match_direct_formula():
    u = np.linspace(-30, 30, 121)
    np.testing.assert_allclose(SPEC.value(u), np.log1p(np.exp(-u)), rtol=1e-13)
    assert SPEC.value(np.array([0.0]))[0] == pytest.approx(math.log(2))


def test_logistic_is_overflow_safe():
    with np.errstate(over="raise"):
        v = SPEC.value(np.array([-1000.0, 1000.0]))
        d = SPEC.first_derivative(np.array([-1000.0, 1000.0]))
    assert v[0] == pytest.approx(1000.0)
    assert v[1] == 0.0 or v[1] < 1e-300
    np.testing.assert_allclose(d, [-1.0, 0.0], atol=1e-300)


def test_logistic_derivatives_by_finite_differences():
    u = np.linspace(-8, 8, 33)
    h = 1e-6
    fd1 = (SPEC.value(u + h) - SPEC.value(u - h)) / (2 * h)
    fd2 = (SPEC.first_derivative(u + h) - SPEC.first_derivative(u - h)) / (2 * h)
    np.testing.assert_allclose(SPEC.first_derivative(u), fd1, atol=1e-8)
    np.testing.assert_allclose(SPEC.second_derivative(u), fd2, atol=1e-8)
    assert np.all(SPEC.first_derivative(u) < 0)
    assert np.max(SPEC.second_derivative(u)) <= SPEC.smoothness


def test_tail_envelope():
    u = np.linspace(SPEC.tail.tau, 40, 200)
    g = -SPEC.first_derivative(u)
    assert np.all(SPEC.tail.lower(u) <= g * (1 + 1e-12))
    assert np.all(g <= SPEC.tail.upper(u) * (1 + 1e-12))


def test_robust_margin_by_hand():
    d = Dataset(np.array([[3.0, 4.0]]), np.array([1.0]), np.array([1.0]))
    # y x^T w = 3, ||w|| = 1
    assert robust_margins(d, np.array([1.0, 0.0]))[0] == pytest.approx(2.0)
    assert robust_loss(SPEC, d, np.array([1.0, 0.0])) == pytest.approx(math.log1p(math.exp(-2.0)))


def test_robust_loss_reduces_to_plain_loss_without_budgets():
    d, _ = generate_gaussian(20, 4, 0)
    w = np.array([0.3, -0.1, 0.2, 0.5])
    assert robust_loss(SPEC, d, w) == pytest.approx(np.sum(np.log1p(np.exp(-d.signed_features @ w))), rel=1e-13)


def test_weight_shape_checked():
    d, _ = generate_gaussian(5, 3, 0)
    with pytest.raises(ValueError):
        robust_loss(SPEC, d, np.zeros(2))


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 5).flatmap(
        lambda p: st.tuples(
            st.lists(st.floats(-3, 3), min_size=p, max_size=p),
            st.lists(st.floats(-3, 3), min_size=p, max_size=p).filter(lambda w: np.linalg.norm(w) > 1e-3),
            st.sampled_from([-1.0, 1.0]),
            st.floats(0, 2),
            st.integers(0, 1000),
        )
    )
)
def test_closed_form_is_the_worst_case(args):
    x, w, y, eps, seed = args
    x, w = np.array(x), np.array(w)
    d = Dataset(x[None, :], np.array([y]), np.array([eps]))
    closed = robust_loss(SPEC, d, w)
    oracle = inner_max_oracle(SPEC, x, y, eps, w, trials=500, seed=seed)
    assert closed == pytest.approx(oracle, abs=1e-12)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for seed in range(10):
        d, _, _ = budgeted_instance(15, 4, seed)
        w = rng.standard_normal(4)
        g = robust_loss_gradient(SPEC, d, w)
        h = 1e-6
        fd = np.array(
            [(robust_loss(SPEC, d, w + h * e) - robust_loss(SPEC, d, w - h * e)) / (2 * h) for e in np.eye(4)]
        )
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


def test_gradient_undefined_at_zero_with_budgets():
    d, _ = generate_gaussian(5, 3, 0)
    robust_loss_gradient(SPEC, d, np.zeros(3))  # no budgets: fine
    with pytest.raises(DomainError):
        robust_loss_gradient(SPEC, assign_budgets(d, Uniform(0.1)), np.zeros(3))


def test_loss_non_decreasing_in_budgets():
    d, _ = generate_gaussian(20, 3, 1)
    w = np.array([0.5, -1.0, 0.2])
    values = [robust_loss(SPEC, assign_budgets(d, Uniform(e)), w) for e in np.linspace(0, 1, 11)]
    assert np.all(np.diff(values) >= 0)


def test_spectral_norm_matches_svd():
    X = np.random.default_rng(1).standard_normal((40, 7))
    assert spectral_norm(X) == pytest.approx(np.linalg.norm(X, 2), rel=1e-8)
    assert spectral_norm(np.zeros((3, 2))) == 0.0


def test_max_step_size_formula():
    d, _, _ = budgeted_instance(30, 5, 2)
    expected = 2.0 / (np.linalg.norm(d.features, 2) + np.linalg.norm(d.budgets)) ** 2
    assert max_step_size(SPEC, d) == pytest.approx(expected, rel=1e-8)
    zero = Dataset(np.zeros((2, 2)), np.array([1.0, -1.0]), np.zeros(2))
    assert max_step_size(SPEC, zero) == math.inf


def test_inner_max_oracle_needs_trials():
    with pytest.raises(ValueError):
        inner_max_oracle(SPEC, np.ones(2), 1.0, 0.1, np.ones(2), trials=0, seed=0)
