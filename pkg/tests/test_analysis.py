import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_margin.analysis import (
    aggregate,
    direction_distance,
    empirical_error,
    generalization_error,
    log_rate_fit,
    mean_and_se,
    monte_carlo_error,
)
from robust_margin.dataset import GroundTruth, generate_gaussian
from robust_margin.loss import DomainError

vectors = st.lists(st.floats(-10, 10), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=60, deadline=None)
@given(vectors, vectors, st.floats(0.01, 100))
def test_direction_distance_properties(a, b, scale):
    a, b = np.array(a), np.array(b)
    d = direction_distance(a, b)
    assert 0 <= d <= 2 + 1e-12
    assert d == pytest.approx(direction_distance(b, a))
    assert d == pytest.approx(direction_distance(scale * a, b), abs=1e-12)


def test_direction_distance_values():
    assert direction_distance([1, 0], [0, 3]) == pytest.approx(math.sqrt(2))
    assert direction_distance([1, 0], [-2, 0]) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        direction_distance([0, 0], [1, 0])


def test_generalization_error_values():
    g = GroundTruth(np.array([1.0, 0.0]))
    assert generalization_error([3.0, 0.0], g) == 0.0
    assert generalization_error([-1.0, 0.0], g) == pytest.approx(1.0)
    assert generalization_error([0.0, 1.0], g) == pytest.approx(0.5)
    assert generalization_error([1.0, 1.0], g) == pytest.approx(0.25)


def test_generalization_error_matches_monte_carlo():
    g = GroundTruth(np.array([0.6, 0.8, 0.0]))
    w = np.array([1.0, 0.2, 0.5])
    rate, se = monte_carlo_error(w, g, 200_000, seed=0)
    assert abs(rate - generalization_error(w, g)) < 4 * se


def test_empirical_error():
    d, g = generate_gaussian(50, 3, 0)
    assert empirical_error(g.true_weights, d) == 0.0
    assert empirical_error(-g.true_weights, d) == 1.0


def test_log_rate_fit_recovers_exact_model():
    t = np.array([100, 300, 1000, 3000, 10000, 30000])
    fit = log_rate_fit(t, 2.5 / np.log(t))
    assert fit.coefficient == pytest.approx(2.5)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.checkpoints_used == 6


def test_log_rate_fit_ignores_early_points_and_needs_enough():
    t = np.array([1, 10, 100, 200, 400, 800, 1600])
    d = 1.0 / np.log(np.maximum(t, 2))
    d[:2] = 99.0
    assert log_rate_fit(t, d).r_squared == pytest.approx(1.0)
    with pytest.raises(ValueError):
        log_rate_fit(t[:5], d[:5])


def test_log_rate_fit_constant_sequence():
    t = np.array([100, 200, 400, 800, 1600])
    assert log_rate_fit(t, np.full(5, 0.3)).r_squared == 0.0
    assert log_rate_fit(t, np.zeros(5)).r_squared == 1.0


def test_mean_and_se():
    assert mean_and_se([2.0]) == (2.0, 0.0)
    m, se = mean_and_se([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1.0 / math.sqrt(3))
    assert all(math.isnan(v) for v in mean_and_se([]))


def test_aggregate_is_order_independent_and_counts_exclusions():
    rows = [
        {"seed": s, "level": lv, "eps": 0.1 * lv, "x": float(s + lv), "ok": not (s == 2 and lv == 1)}
        for s in range(3)
        for lv in range(2)
    ]
    a = aggregate(rows, ["x"], include=lambda r: r["ok"])
    b = aggregate(list(reversed(rows)), ["x"], include=lambda r: r["ok"])
    assert a.summary == b.summary and a.records == b.records
    assert a.summary[0]["x_mean"] == 1.0 and a.summary[0]["excluded"] == 0
    assert a.summary[1]["x_mean"] == 1.5 and a.summary[1]["excluded"] == 1
    with pytest.raises(ValueError):
        aggregate([], ["x"])


def test_report_writers(tmp_path):
    rep = aggregate([{"seed": 0, "level": 0, "x": 1.5}], ["x"])
    rep.write_summary_csv(tmp_path / "s.csv", comment="hello")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# hello" and lines[1] == "level,trials,excluded,x_mean,x_se"
    assert '"x_mean": 1.5' in rep.to_json()
