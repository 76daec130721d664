"""Seeded invariant suite run by ``robust-margin check``.

Every check returns ``(passed, detail)``. Library functions are looked up
through their modules at call time so a patched implementation is what
gets checked.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import analysis, dataset, loss, solvers, trainer


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _instance(n, p, seed, eps_scale=0.5):
    """Gaussian data with budgets ``Unif(0, eps_scale / ||w_M||)``."""
    d, g = dataset.generate_gaussian(n, p, seed)
    mm = solvers.max_margin(d)
    d = dataset.assign_budgets(d, dataset.UniformRandom(0.0, eps_scale / mm.objective_norm, seed))
    return d, g, mm


def _fd_gradient(spec, d, w):
    h = 1e-6 * (1.0 + np.linalg.norm(w))
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (loss.robust_loss(spec, d, w + e) - loss.robust_loss(spec, d, w - e)) / (2 * h)
    return g


def check_csv_round_trip(quick):
    for seed in range(3 if quick else 10):
        d, _ = dataset.generate_gaussian(7, 3, seed)
        d = dataset.assign_budgets(d, dataset.UniformRandom(0, 2, seed))
        if dataset.loads_csv(dataset.dumps_csv(d)) != d:
            return False, f"seed {seed}: round trip changed the data"
    return True, "exact"


def check_generation(quick):
    for seed in range(5 if quick else 20):
        d, g = dataset.generate_gaussian(50, 8, seed)
        if np.min(d.signed_features @ g.true_weights) <= 0:
            return False, f"seed {seed}: not separated by w*"
        if dataset.generate_gaussian(50, 8, seed)[0] != d:
            return False, f"seed {seed}: not deterministic"
    return True, "separable and deterministic"


def check_shift_norms(quick):
    d, g = dataset.generate_gaussian(40, 5, 1)
    d = dataset.assign_budgets(d, dataset.UniformRandom(0, 1, 1))
    moved = np.linalg.norm(dataset.apply_adversarial_shift(d, g).features - d.features, axis=1)
    err = float(np.max(np.abs(moved - d.budgets)))
    return err < 1e-12, f"max |shift - eps| = {err:.2e}"


def check_closed_form_vs_oracle(quick):
    spec = loss.logistic()
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(20 if quick else 200):
        p = int(rng.integers(1, 6))
        x, w = rng.standard_normal(p), rng.standard_normal(p)
        y = float(rng.choice([-1.0, 1.0]))
        eps = float(rng.uniform(0, 2))
        closed = float(spec.value(np.array([y * x @ w - eps * np.linalg.norm(w)]))[0])
        oracle = loss.inner_max_oracle(spec, x, y, eps, w, trials=1000 if quick else 10_000, seed=k)
        if oracle > closed + 1e-12:
            return False, f"instance {k}: sampled value {oracle} exceeds closed form {closed}"
        worst = max(worst, abs(closed - oracle) / max(1.0, abs(closed)))
    return worst < 1e-12, f"max gap {worst:.2e}"


def check_gradient_fd(quick):
    spec = loss.logistic()
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in range(20 if quick else 100):
        n, p = int(rng.integers(2, 15)), int(rng.integers(1, 6))
        d = dataset.Dataset(rng.standard_normal((n, p)), rng.choice([-1.0, 1.0], n), rng.uniform(0, 1, n))
        w = rng.standard_normal(p)
        w *= rng.uniform(0.1, 10) / np.linalg.norm(w)
        fd = _fd_gradient(spec, d, w)
        err = np.linalg.norm(loss.robust_loss_gradient(spec, d, w) - fd) / (1 + np.linalg.norm(fd))
        worst = max(worst, float(err))
    return worst < 1e-5, f"max relative error {worst:.2e}"


def check_budget_monotonicity(quick):
    spec = loss.logistic()
    rng = np.random.default_rng(2)
    for k in range(20 if quick else 100):
        d = dataset.Dataset(rng.standard_normal((10, 3)), rng.choice([-1.0, 1.0], 10), rng.uniform(0, 1, 10))
        w = rng.standard_normal(3)
        bigger = d.with_budgets(d.budgets + rng.uniform(0, 1, 10))
        if loss.robust_loss(spec, bigger, w) < loss.robust_loss(spec, d, w):
            return False, f"instance {k}: loss decreased when budgets grew"
    return True, "non-decreasing in every budget"


def check_logistic_spec(quick):
    spec = loss.logistic()
    u = np.linspace(-30, 30, 601)
    h = 1e-5
    fd = (spec.value(u + h) - spec.value(u - h)) / (2 * h)
    d1 = spec.first_derivative(u)
    if np.max(np.abs(fd - d1) / np.maximum(np.abs(d1), 1e-300)) > 1e-6:
        return False, "first derivative disagrees with finite differences"
    if np.any(d1 >= 0) or np.any(spec.value(u) < 0):
        return False, "loss not positive and decreasing"
    if np.max(np.abs(spec.second_derivative(u))) > spec.smoothness:
        return False, "second derivative exceeds the smoothness constant"
    grid = np.arange(1.0, 51.0)
    tail = -spec.first_derivative(grid)
    rel = 1e-12
    ok = np.all(tail >= spec.tail.lower(grid) * (1 - rel)) and np.all(tail <= spec.tail.upper(grid) * (1 + rel))
    return bool(ok), "tail envelope holds on u = 1..50" if ok else "tail envelope violated"


def check_step_size_descent(quick):
    spec = loss.logistic()
    for seed in range(2 if quick else 5):
        d, _, _ = _instance(30, 10, seed)
        eta = 0.9 * loss.max_step_size(spec, d)
        traj = trainer.train(spec, d, trainer.GDConfig(eta, 2000 if quick else 20_000))
        losses = traj.column("loss")
        if np.any(np.diff(losses) > 1e-12 * losses[:-1]):
            return False, f"seed {seed}: loss increased"
    return True, "loss non-increasing at 0.9x the bound"


def check_update_exactness(quick):
    spec = loss.logistic()
    d, _, _ = _instance(12, 4, 3)
    eta = 0.5 * loss.max_step_size(spec, d)
    traj = trainer.train(spec, d, trainer.GDConfig(eta, 20, checkpoint_schedule=range(21)))
    W = traj.weights
    worst = 0.0
    for t in range(20):
        step = W[t] - eta * loss.robust_loss_gradient(spec, d, W[t])
        worst = max(worst, float(np.max(np.abs(step - W[t + 1]))))
    return worst == 0.0, f"max deviation {worst:.2e}"


def check_trajectory_witnesses(quick):
    spec = loss.logistic()
    iters = 50_000 if quick else 100_000
    for seed in range(2 if quick else 5):
        d, _, mm = _instance(30, 10, seed, eps_scale=1.0)
        rm = solvers.rm_solve(d, mm)
        eta = 0.9 * loss.max_step_size(spec, d)
        traj = trainer.train(spec, d, trainer.GDConfig(eta, iters), reference=rm.weights)
        s = trainer.s_sequence(traj, rm.weights, eta)
        if not np.all(np.diff(s) > 0):
            return False, f"seed {seed}: s-sequence not strictly increasing"
        norms = traj.column("weight_norm")
        burn = int(np.searchsorted(traj.iterations, 10))
        if not np.all(np.diff(norms[burn:]) > 0):
            return False, f"seed {seed}: weight norm not increasing after burn-in"
        g = traj.column("grad_norm")
        if not g[-1] < 1e-3 * g[0]:
            return False, f"seed {seed}: gradient only fell to {g[-1] / g[0]:.2e} of its start"
        if traj.final.min_robust_margin <= 0:
            return False, f"seed {seed}: robust margins not all positive"
    return True, "s increasing, norm growing, gradient vanishing, margins positive"


def check_rm_certificates(quick):
    for seed in range(3 if quick else 10):
        d, _, mm = _instance(40, 8, seed, eps_scale=0.9)
        rm = solvers.rm_solve(d, mm)
        if not rm.optimal:
            return False, f"seed {seed}: status {rm.status}"
        norm = rm.objective_norm
        if np.min(solvers.constraint_slack(rm, d)) < -1e-8 * (1 + norm):
            return False, f"seed {seed}: infeasible solution"
        if solvers.kkt_residual(rm, d) >= 1e-6:
            return False, f"seed {seed}: KKT residual {solvers.kkt_residual(rm, d):.2e}"
        if not solvers.theta(rm, d) > 1:
            return False, f"seed {seed}: theta <= 1"
        shrunk = d.signed_features @ (0.999 * rm.weights) - (1 + d.budgets * 0.999 * norm)
        if np.min(shrunk) >= 0:
            return False, f"seed {seed}: shrunk solution still feasible"
        upper = mm.objective_norm / (1 - d.budgets.max() * mm.objective_norm)
        if not (mm.objective_norm <= norm * (1 + 1e-12) and norm <= upper * (1 + 1e-12)):
            return False, f"seed {seed}: norm ordering violated"
    return True, "feasible, stationary, theta > 1, minimal, ordered"


def check_uniform_closed_form(quick):
    worst = 0.0
    for seed in range(3 if quick else 10):
        d, _ = dataset.generate_gaussian(50, 10, seed)
        mm = solvers.max_margin(d)
        eps = 0.5 / mm.objective_norm
        rm = solvers.rm_solve(dataset.assign_budgets(d, dataset.Uniform(eps)), mm)
        ref = solvers.rm_uniform_closed_form(mm, eps)
        worst = max(worst, float(np.linalg.norm(rm.weights - ref) / np.linalg.norm(ref)))
    return worst < 1e-6, f"max relative error {worst:.2e}"


def check_fixed_point_monotone(quick):
    d, _, mm = _instance(20, 5, 4, eps_scale=0.9)
    grid = np.linspace(mm.objective_norm, 3 * mm.objective_norm, 8 if quick else 25)
    g = [solvers.fixed_point_map(d, s) for s in grid]
    ok = bool(np.all(np.diff(g) >= -1e-9 * max(g)))
    return ok, "g(s) non-decreasing" if ok else "g(s) decreased"


def grid_search_rm_norm(d, directions=100_000, resolution=1e-3):
    """RM norm for p = 2 by scanning unit directions and a norm grid."""
    if d.p != 2:
        raise ValueError("grid search needs p = 2")
    ang = np.linspace(0, 2 * np.pi, directions, endpoint=False)
    U = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    m = d.signed_features @ U.T - d.budgets[:, None]
    with np.errstate(divide="ignore"):
        need = np.where(m > 0, 1.0 / m, np.inf).max(axis=0)
    # smallest grid norm satisfying r * (y x^T u - eps) >= 1
    best = np.min(need)
    return math.ceil(best / resolution) * resolution


def check_grid_oracle(quick):
    worst = 0.0
    for seed in range(5 if quick else 20):
        n = 3 + seed % 4
        d, _, mm = _instance(n, 2, 100 + seed, eps_scale=0.6)
        rm = solvers.rm_solve(d, mm)
        worst = max(worst, abs(rm.objective_norm - grid_search_rm_norm(d)))
    return worst < 2e-3, f"max |norm - grid| = {worst:.2e}"


def check_analysis_metrics(quick):
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        dab = analysis.direction_distance(a, b)
        if abs(dab - analysis.direction_distance(b, a)) > 1e-15:
            return False, "distance not symmetric"
        if abs(dab - analysis.direction_distance(3.7 * a, 0.2 * b)) > 1e-12:
            return False, "distance not scale invariant"
        cos = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
        if abs(dab**2 - (2 - 2 * cos)) > 1e-12:
            return False, "distance inconsistent with the angle"
    d, g = dataset.generate_gaussian(5, 6, 0)
    for k in range(3 if quick else 20):
        w = np.random.default_rng(k).standard_normal(6)
        ge = analysis.generalization_error(w, g)
        if abs(ge - analysis.generalization_error(5 * w, g)) > 1e-12:
            return False, "GE not scale invariant"
        mc, se = analysis.monte_carlo_error(w, g, 100_000 if quick else 1_000_000, seed=k)
        if abs(ge - mc) > 3 * se + 1e-12:
            return False, f"GE {ge:.4f} vs Monte Carlo {mc:.4f} +- {se:.4f}"
    return True, "distance and GE identities hold"


CHECKS: dict[str, Callable[[bool], tuple[bool, str]]] = {
    "dataset.csv_round_trip": check_csv_round_trip,
    "dataset.generation": check_generation,
    "dataset.shift_norms": check_shift_norms,
    "loss.closed_form_vs_oracle": check_closed_form_vs_oracle,
    "loss.gradient_finite_differences": check_gradient_fd,
    "loss.budget_monotonicity": check_budget_monotonicity,
    "loss.logistic_spec": check_logistic_spec,
    "loss.step_size_descent": check_step_size_descent,
    "trainer.update_exactness": check_update_exactness,
    "trainer.trajectory_witnesses": check_trajectory_witnesses,
    "solvers.rm_certificates": check_rm_certificates,
    "solvers.uniform_closed_form": check_uniform_closed_form,
    "solvers.fixed_point_monotone": check_fixed_point_monotone,
    "solvers.grid_oracle": check_grid_oracle,
    "analysis.metrics": check_analysis_metrics,
}


def run_checks(quick: bool = False, only=None, out=None) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        if only and not any(name.startswith(o) for o in only):
            continue
        start = time.perf_counter()
        try:
            passed, detail = fn(quick)
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(passed), detail, time.perf_counter() - start)
        results.append(res)
        if out is not None:
            print(f"{'PASS' if res.passed else 'FAIL'}  {res.name:<36} {res.seconds:7.2f}s  {res.detail}", file=out)
    return results


def format_table(results: list[CheckResult]) -> str:
    buf = io.StringIO()
    for r in results:
        buf.write(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<36} {r.seconds:7.2f}s  {r.detail}\n")
    return buf.getvalue()
