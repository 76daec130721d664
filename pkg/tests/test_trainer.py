import logging

import numpy as np
import pytest

from robust_margin.dataset import Uniform, assign_budgets, generate_gaussian
from robust_margin.loss import DomainError, logistic, max_step_size, robust_loss, robust_loss_gradient
from robust_margin.solvers import max_margin, rm_solve
from robust_margin.trainer import (
    DivergenceError,
    GDConfig,
    default_initial_weights,
    direction,
    geometric_schedule,
    load_trajectory_csv,
    s_sequence,
    save_trajectory_csv,
    train,
)

from conftest import budgeted_instance

SPEC = logistic()


def test_geometric_schedule():
    s = geometric_schedule(1000)
    assert s[:4] == [0, 1, 2, 3] and s[-1] == 1000
    assert all(b > a for a, b in zip(s, s[1:]))
    assert len(s) < 40
    assert geometric_schedule(0) == [0]


def test_config_validation():
    with pytest.raises(ValueError):
        GDConfig(0.0, 10)
    with pytest.raises(ValueError):
        GDConfig(0.1, -1)
    with pytest.raises(ValueError):
        GDConfig(0.1, 10, checkpoint_schedule=[0, 5, 5])
    with pytest.raises(ValueError):
        GDConfig(0.1, 10, checkpoint_schedule=[0, 11])
    assert GDConfig(0.1, 10, checkpoint_schedule=[0, 10]).checkpoint_schedule == (0, 10)


def test_default_initialisation():
    d, _ = generate_gaussian(10, 3, 0)
    w0 = default_initial_weights(d)
    xbar = d.signed_features.sum(axis=0)
    np.testing.assert_allclose(w0, 1e-3 * xbar / np.linalg.norm(xbar))


def test_updates_are_plain_gradient_steps():
    d, _, _ = budgeted_instance(20, 4, 1)
    eta = 0.5 * max_step_size(SPEC, d)
    traj = train(SPEC, d, GDConfig(eta, 3, checkpoint_schedule=[0, 1, 2, 3]))
    w = default_initial_weights(d)
    for c in traj.checkpoints:
        assert np.array_equal(c.weights, w)
        assert c.loss == pytest.approx(robust_loss(SPEC, d, w), rel=1e-14)
        w = w - eta * robust_loss_gradient(SPEC, d, w)


def test_custom_initial_weights():
    d, _, _ = budgeted_instance(10, 3, 0)
    w0 = np.array([0.1, 0.2, 0.3])
    traj = train(SPEC, d, GDConfig(0.01, 1, initial_weights=w0))
    assert np.array_equal(traj.checkpoints[0].weights, w0)
    with pytest.raises(ValueError):
        train(SPEC, d, GDConfig(0.01, 1, initial_weights=np.zeros(2)))


def test_zero_start_with_budgets_is_a_domain_error():
    d, _ = generate_gaussian(10, 3, 0)
    d = assign_budgets(d, Uniform(0.1))
    with pytest.raises(DomainError):
        train(SPEC, d, GDConfig(0.01, 5, initial_weights=np.zeros(3)))


def test_short_run_diagnostics():
    d, _, mm = budgeted_instance(30, 10, 0)
    rm = rm_solve(d, mm)
    eta = 0.9 * max_step_size(SPEC, d)
    traj = train(SPEC, d, GDConfig(eta, 5000), reference=rm.weights)
    assert np.all(np.diff(traj.column("loss")) <= 0)
    assert np.all(np.diff(traj.column("s_value")) > 0)
    np.testing.assert_allclose(traj.column("s_value"), s_sequence(traj, rm.weights, eta))
    assert traj.final.weight_norm > traj.checkpoints[0].weight_norm
    assert traj.final.min_robust_margin > 0
    assert list(traj.iterations) == geometric_schedule(5000)


def test_without_budgets_direction_moves_toward_max_margin():
    d, _ = generate_gaussian(30, 5, 2)
    mm = max_margin(d)
    eta = 0.9 * max_step_size(SPEC, d)
    traj = train(SPEC, d, GDConfig(eta, 20000))
    gap = [np.linalg.norm(direction(w) - direction(mm.weights)) for w in traj.weights[10:]]
    assert gap[-1] < gap[0]


def test_huge_step_diverges(caplog):
    d, _ = generate_gaussian(100, 40, 1)
    with caplog.at_level(logging.WARNING), pytest.raises(DivergenceError):
        train(SPEC, d, GDConfig(1e6, 1000))
    assert "not below the sufficient bound" in caplog.text


def test_trajectory_csv_round_trip(tmp_path):
    d, _, _ = budgeted_instance(15, 3, 0)
    traj = train(SPEC, d, GDConfig(0.05, 50))
    path, wpath = tmp_path / "t.csv", tmp_path / "w.csv"
    save_trajectory_csv(traj, path, weights_path=wpath, comment="cfg")
    rows = load_trajectory_csv(path)
    assert [r["t"] for r in rows] == list(traj.iterations)
    assert [r["loss"] for r in rows] == list(traj.column("loss"))
    W = np.loadtxt(wpath, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(W[:, 1:], traj.weights)
