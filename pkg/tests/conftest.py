import numpy as np
import pytest

from robust_margin.dataset import Dataset, UniformRandom, assign_budgets, generate_gaussian
from robust_margin.solvers import max_margin


def budgeted_instance(n, p, seed, scale=0.5):
    """Gaussian data with budgets drawn from Unif(0, scale / ||w_M||)."""
    d, g = generate_gaussian(n, p, seed)
    mm = max_margin(d)
    return assign_budgets(d, UniformRandom(0.0, scale / mm.objective_norm, seed)), g, mm


@pytest.fixture
def two_points():
    # symmetric pair on the first axis: w_M = (1, 0)
    return Dataset(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([1.0, -1.0]), np.zeros(2))


@pytest.fixture
def xor_data():
    X = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    return Dataset(X, np.array([1.0, 1.0, -1.0, -1.0]), np.zeros(4))
