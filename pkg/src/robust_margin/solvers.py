"""Max-margin and robust max-margin (RM) solvers.

The inner problem is a hard-margin SVM without intercept and with
per-sample right-hand sides,

    min 1/2 ||w||^2   s.t.   y_i x_i^T w >= m_i,

solved in the dual by projected coordinate ascent. The RM program
``y_i x_i^T w >= 1 + eps_i ||w||`` is reduced to it through the scalar
fixed point ``s = ||w_svm(1 + eps * s)||``, located by bisection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import linprog

from .dataset import Dataset

DUAL_TOL = 1e-8
FEAS_TOL = 1e-8
KKT_TOL = 1e-6
FP_TOL = 1e-10
IMPROVEMENT_TOL = 1e-14
MAX_SWEEPS = 1_000_000
DIVERGENCE_OBJECTIVE = 1e12
EXISTENCE_SLACK = 1e-9
MAX_BISECTIONS = 200

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NOT_CONVERGED = "not_converged"


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MarginSolution:
    weights: np.ndarray
    duals: np.ndarray
    support_set: tuple[int, ...]
    objective_norm: float
    status: str
    kind: str = "svm"
    rhs: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "status": self.status,
            "weights": self.weights.tolist(),
            "duals": self.duals.tolist(),
            "support": list(self.support_set),
            "objective_norm": self.objective_norm,
        }
        if self.rhs is not None:
            out["rhs"] = self.rhs.tolist()
        out["info"] = dict(self.info)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> MarginSolution:
        rhs = data.get("rhs")
        return cls(
            weights=np.asarray(data["weights"], dtype=float),
            duals=np.asarray(data["duals"], dtype=float),
            support_set=tuple(int(i) for i in data["support"]),
            objective_norm=float(data["objective_norm"]),
            status=data["status"],
            kind=data.get("kind", "svm"),
            rhs=None if rhs is None else np.asarray(rhs, dtype=float),
            info=dict(data.get("info", {})),
        )


def _infeasible(d: Dataset, kind: str, **info) -> MarginSolution:
    return MarginSolution(
        weights=np.full(d.p, np.nan),
        duals=np.zeros(d.n),
        support_set=(),
        objective_norm=float("inf"),
        status=INFEASIBLE,
        kind=kind,
        info=info,
    )


@numba.njit(cache=True)
def _cd_sweeps(Q, m, alpha, grad, max_sweeps, tol):
    # grad holds m - Q @ alpha and is kept in sync with alpha
    n = alpha.shape[0]
    best = 0.0
    sweeps = 0
    for sweep in range(max_sweeps):
        best = 0.0
        for i in range(n):
            qii = Q[i, i]
            if qii <= 0.0:
                continue
            delta = grad[i] / qii
            if delta < -alpha[i]:
                delta = -alpha[i]
            if delta == 0.0:
                continue
            gain = delta * grad[i] - 0.5 * delta * delta * qii
            if gain > best:
                best = gain
            alpha[i] += delta
            for j in range(n):
                grad[j] -= delta * Q[i, j]
        sweeps = sweep + 1
        if best < tol:
            break
    return sweeps, best


def _dual_objective(m, alpha, grad):
    return 0.5 * (m @ alpha + alpha @ grad)


def _polish(Q, m, alpha):
    """Solve the equality system on the current active set; None unless KKT holds."""
    active = np.flatnonzero(alpha > 0)
    scale = max(1.0, float(np.max(m)))
    for _ in range(8):
        if active.size == 0:
            return None
        sub = Q[np.ix_(active, active)]
        a, *_ = np.linalg.lstsq(sub, m[active], rcond=None)
        if np.max(np.abs(sub @ a - m[active])) > 1e-10 * scale:
            return None
        if np.all(a > 0):
            break
        active = active[a > 0]
    else:
        return None
    full = np.zeros_like(alpha)
    full[active] = a
    slack = m - Q[:, active] @ a
    if np.max(slack) > 1e-10 * scale:
        return None
    return full


def _solve_dual(Q, m, alpha0=None):
    """Maximise ``m^T a - 1/2 a^T Q a`` over ``a >= 0``. Returns (alpha, status, sweeps)."""
    n = m.shape[0]
    alpha = np.zeros(n) if alpha0 is None else np.array(alpha0, dtype=float)
    grad = m - Q @ alpha
    total = 0
    chunk = 16
    while total < MAX_SWEEPS:
        sweeps, best = _cd_sweeps(Q, m, alpha, grad, min(chunk, MAX_SWEEPS - total), IMPROVEMENT_TOL)
        total += sweeps
        if _dual_objective(m, alpha, grad) > DIVERGENCE_OBJECTIVE:
            return alpha, INFEASIBLE, total
        polished = _polish(Q, m, alpha)
        if polished is not None:
            return polished, OPTIMAL, total
        if best < IMPROVEMENT_TOL:
            return alpha, OPTIMAL, total
        chunk = min(chunk * 2, 4096)
    return alpha, NOT_CONVERGED, total


def _separable(A, rhs) -> bool:
    res = linprog(
        np.zeros(A.shape[1]),
        A_ub=-A,
        b_ub=-rhs,
        bounds=[(None, None)] * A.shape[1],
        method="highs",
    )
    return res.status == 0


class _DualProblem:
    """Gram matrix and warm-start state shared by repeated solves on one dataset."""

    def __init__(self, d: Dataset):
        self.d = d
        self.A = d.signed_features
        self.Q = self.A @ self.A.T
        self.alpha = None

    def solve(self, rhs):
        alpha, status, sweeps = _solve_dual(self.Q, rhs, self.alpha)
        if status != INFEASIBLE:
            self.alpha = alpha
        w = self.A.T @ alpha
        if status == OPTIMAL:
            feas_tol = FEAS_TOL * (1.0 + np.linalg.norm(w))
            if np.min(self.A @ w - rhs) < -feas_tol:
                status = NOT_CONVERGED
        return w, alpha, status, sweeps


def solve_svm(d: Dataset, margins) -> MarginSolution:
    """Minimum-norm ``w`` with ``y_i x_i^T w >= margins_i``."""
    rhs = np.asarray(margins, dtype=float)
    if rhs.shape != (d.n,):
        raise ValueError(f"margins must have shape ({d.n},)")
    if np.any(rhs <= 0) or not np.all(np.isfinite(rhs)):
        raise ValueError("margins must be positive and finite")
    prob = _DualProblem(d)
    if not _separable(prob.A, rhs):
        return _infeasible(d, "svm", reason="data not linearly separable")
    return _svm_solution(prob, rhs, "svm")


def _svm_solution(prob: _DualProblem, rhs, kind) -> MarginSolution:
    w, alpha, status, sweeps = prob.solve(rhs)
    if status == INFEASIBLE:
        return _infeasible(prob.d, kind, reason="dual objective diverged")
    return MarginSolution(
        weights=w,
        duals=alpha,
        support_set=tuple(int(i) for i in np.flatnonzero(alpha > DUAL_TOL)),
        objective_norm=float(np.linalg.norm(w)),
        status=status,
        kind=kind,
        rhs=np.array(rhs, dtype=float),
        info={"sweeps": int(sweeps)},
    )


def max_margin(d: Dataset) -> MarginSolution:
    """Minimum-norm ``w`` with unit functional margin on every sample; budgets are ignored."""
    prob = _DualProblem(d)
    ones = np.ones(d.n)
    if not _separable(prob.A, ones):
        return _infeasible(d, "mm", reason="data not linearly separable")
    return _svm_solution(prob, ones, "mm")


def rm_existence_bound(d: Dataset) -> float:
    """``1 / ||w_M||``: any budgets with ``max eps_i`` below it admit an RM classifier."""
    mm = max_margin(d)
    if not mm.optimal:
        raise InfeasibleError("max-margin classifier does not exist (data not separable)")
    return 1.0 / mm.objective_norm


def rm_uniform_closed_form(wM: MarginSolution, eps: float) -> np.ndarray:
    if eps < 0:
        raise ValueError("eps must be non-negative")
    shrink = 1.0 - eps * wM.objective_norm
    if shrink <= 0:
        raise InfeasibleError(
            f"no RM classifier for uniform eps={eps}: need eps < 1/||w_M|| = {1 / wM.objective_norm}"
        )
    return wM.weights / shrink


def budget_margin_norm(d: Dataset) -> float:
    """``nu = min ||w|| s.t. y_i x_i^T w >= eps_i``.

    An RM classifier exists iff ``nu < 1``; for uniform budgets
    ``nu = eps ||w_M||``.
    """
    prob = _DualProblem(d)
    w, _, status, _ = prob.solve(np.array(d.budgets, dtype=float))
    if status == INFEASIBLE:
        return float("inf")
    return float(np.linalg.norm(w))


def rm_solve(d: Dataset, mm: MarginSolution | None = None) -> MarginSolution:
    """Robust max-margin classifier for the dataset's budgets.

    Bisection on ``h(s) = g(s) - s`` where ``g(s)`` is the norm of the SVM
    solution with right-hand sides ``1 + eps * s``. ``h >= 0`` at
    ``||w_M||``, ``h <= 0`` at ``||w_M|| / (1 - nu)`` (see
    ``budget_margin_norm``) and ``{h <= 0}`` is a half-line, so the
    bisection converges to the RM norm.
    """
    if mm is None:
        mm = max_margin(d)
    if not mm.optimal:
        return _infeasible(d, "rm", reason="max-margin classifier unavailable", mm_status=mm.status)
    eps = d.budgets
    eps_max = float(np.max(eps))
    norm_m = mm.objective_norm
    if eps_max == 0.0:
        return MarginSolution(
            weights=mm.weights.copy(),
            duals=mm.duals.copy(),
            support_set=mm.support_set,
            objective_norm=norm_m,
            status=OPTIMAL,
            kind="rm",
            rhs=np.ones(d.n),
            info={"fixed_point": norm_m, "bisections": 0, "nu": 0.0},
        )
    nu = budget_margin_norm(d)
    if nu >= 1.0 - EXISTENCE_SLACK:
        return _infeasible(
            d, "rm", reason="budgets at or beyond the existence boundary", nu=nu, bound=1.0 / norm_m
        )

    prob = _DualProblem(d)
    prob.alpha = mm.duals.copy()
    fp_tol = FP_TOL * (1.0 + norm_m)

    def evaluate(s):
        w, beta, status, _ = prob.solve(1.0 + eps * s)
        return np.linalg.norm(w) - s, (w, beta, status, s)

    lo = norm_m
    hi = norm_m / (1.0 - nu)
    h_lo, best = evaluate(lo)
    if h_lo > fp_tol:
        h_hi, at_hi = evaluate(hi)
        if h_hi > fp_tol:
            return _infeasible(d, "rm", reason="bracket has no sign change", bound=1.0 / norm_m)
        status = NOT_CONVERGED
        best = at_hi
        for k in range(1, MAX_BISECTIONS + 1):
            mid = 0.5 * (lo + hi)
            h_mid, at_mid = evaluate(mid)
            if h_mid <= 0:
                hi, best = mid, at_mid
            else:
                lo = mid
            if abs(h_mid) < fp_tol:
                best = at_mid
                status = OPTIMAL
                break
        bisections = k
    else:
        status = OPTIMAL
        bisections = 0

    w, beta, inner_status, s_star = best
    if inner_status != OPTIMAL:
        status = NOT_CONVERGED
    norm_w = float(np.linalg.norm(w))
    # SVM duals -> multipliers of w = sum_i alpha_i (y_i x_i - eps_i w/||w||)
    alpha = beta / (1.0 - float(beta @ eps) / norm_w)
    return MarginSolution(
        weights=w,
        duals=alpha,
        support_set=tuple(int(i) for i in np.flatnonzero(alpha > DUAL_TOL)),
        objective_norm=norm_w,
        status=status,
        kind="rm",
        rhs=1.0 + eps * s_star,
        info={"fixed_point": float(s_star), "bisections": bisections, "nu": nu},
    )


def _effective_budgets(sol: MarginSolution, d: Dataset) -> np.ndarray:
    return d.budgets if sol.kind == "rm" else np.zeros(d.n)


def _required_margins(sol: MarginSolution, d: Dataset) -> np.ndarray:
    if sol.kind == "svm" and sol.rhs is not None:
        return sol.rhs
    return 1.0 + _effective_budgets(sol, d) * np.linalg.norm(sol.weights)


def constraint_slack(sol: MarginSolution, d: Dataset) -> np.ndarray:
    """``y_i x_i^T w - (1 + eps_i ||w||)`` (right-hand sides as solved for plain SVMs)."""
    return d.signed_features @ sol.weights - _required_margins(sol, d)


def support_vectors(sol: MarginSolution, d: Dataset, tol: float = 1e-7) -> tuple[int, ...]:
    """Indices whose margin constraint is active within ``tol * (1 + ||w||)``."""
    slack = constraint_slack(sol, d)
    scale = 1.0 + np.linalg.norm(sol.weights)
    return tuple(int(i) for i in np.flatnonzero(np.abs(slack) <= tol * scale))


def kkt_residual(sol: MarginSolution, d: Dataset) -> float:
    """Relative stationarity residual ``||w - sum_S alpha_i (y_i x_i - eps_i w_hat)|| / (1 + ||w||)``."""
    w = sol.weights
    norm = np.linalg.norm(w)
    S = np.array(sol.support_set, dtype=int)
    eps = _effective_budgets(sol, d)
    a = sol.duals[S]
    combo = a @ d.signed_features[S] if S.size else np.zeros(d.p)
    if S.size and norm > 0:
        combo = combo - float(a @ eps[S]) * (w / norm)
    return float(np.linalg.norm(w - combo) / (1.0 + norm))


def theta(sol: MarginSolution, d: Dataset, tol: float = 1e-7) -> float:
    """Smallest robust margin among non-support samples (``inf`` if all are support)."""
    S = set(support_vectors(sol, d, tol))
    rest = [i for i in range(d.n) if i not in S]
    if not rest:
        return float("inf")
    w = sol.weights
    margins = d.signed_features[rest] @ w - _effective_budgets(sol, d)[rest] * np.linalg.norm(w)
    return float(np.min(margins))


def fixed_point_map(d: Dataset, s: float) -> float:
    """``g(s)``: norm of the SVM solution with right-hand sides ``1 + eps * s``."""
    sol = solve_svm(d, 1.0 + d.budgets * s)
    return sol.objective_norm
