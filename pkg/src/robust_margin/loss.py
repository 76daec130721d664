"""Scalar margin losses, the worst-case (robust) empirical loss and its gradient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from .dataset import Dataset

ZERO_NORM = 1e-12


class DomainError(ValueError):
    """Raised where a quantity is undefined, e.g. the robust gradient at ``w = 0``."""


@dataclass(frozen=True)
class TailParams:
    """Envelope ``c(1 -/+ exp(-mu u)) exp(-a u)`` bounding ``-l'(u)`` for ``u > tau``."""

    a: float
    c: float
    tau: float
    mu: float

    def lower(self, u):
        u = np.asarray(u, dtype=float)
        return self.c * (1.0 - np.exp(-self.mu * u)) * np.exp(-self.a * u)

    def upper(self, u):
        u = np.asarray(u, dtype=float)
        return self.c * (1.0 + np.exp(-self.mu * u)) * np.exp(-self.a * u)


@dataclass(frozen=True)
class LossSpec:
    """A decreasing, twice-differentiable, ``smoothness``-smooth loss of the margin.

    The three callables take and return numpy arrays elementwise.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    first_derivative: Callable[[np.ndarray], np.ndarray]
    second_derivative: Callable[[np.ndarray], np.ndarray]
    smoothness: float
    tail: TailParams


def _logistic_value(u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = np.log1p(np.exp(-u[pos]))
    neg = ~pos
    out[neg] = -u[neg] + np.log1p(np.exp(u[neg]))
    return out


def _logistic_first(u):
    return -expit(-np.asarray(u, dtype=float))


def _logistic_second(u):
    s = expit(np.asarray(u, dtype=float))
    return s * (1.0 - s)


def logistic() -> LossSpec:
    return LossSpec(
        name="logistic",
        value=_logistic_value,
        first_derivative=_logistic_first,
        second_derivative=_logistic_second,
        smoothness=1.0,
        tail=TailParams(a=1.0, c=1.0, tau=1.0, mu=1.0),
    )


def _check_weights(d: Dataset, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (d.p,):
        raise ValueError(f"weight vector must have shape ({d.p},), got {w.shape}")
    return w


def robust_margins(d: Dataset, w) -> np.ndarray:
    """``y_i x_i^T w - eps_i ||w||`` for every sample."""
    w = _check_weights(d, w)
    return d.signed_features @ w - d.budgets * np.linalg.norm(w)


def robust_loss(spec: LossSpec, d: Dataset, w) -> float:
    return float(np.sum(spec.value(robust_margins(d, w))))


def margin_gradient(spec: LossSpec, A, eps, w):
    """Robust margins, their norm and the robust-loss gradient for signed rows ``A``.

    Shared by the public gradient and the trainer so both produce identical bits.
    """
    norm = float(np.linalg.norm(w))
    margins = A @ w - eps * norm
    coef = spec.first_derivative(margins)
    grad = coef @ A
    if norm > 0.0:
        grad = grad - (coef @ eps / norm) * w
    return margins, norm, grad


def robust_loss_gradient(spec: LossSpec, d: Dataset, w) -> np.ndarray:
    w = _check_weights(d, w)
    if np.any(d.budgets > 0) and np.linalg.norm(w) < ZERO_NORM:
        raise DomainError("robust loss is not differentiable at w = 0 when any budget is positive")
    return margin_gradient(spec, d.signed_features, d.budgets, w)[2]


def inner_max_oracle(spec: LossSpec, x, y: float, eps: float, w, trials: int, seed: int) -> float:
    """Largest ``l(y (x + z)^T w)`` over sampled ``||z|| = eps``.

    The samples are uniform on the sphere; the candidates ``z = 0`` and
    ``z = -eps y w/||w||`` are always included. Only meant for checking
    the closed form.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    candidates = [np.zeros_like(x)]
    if eps > 0:
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((trials, x.size))
        z *= eps / np.linalg.norm(z, axis=1, keepdims=True)
        candidates.append(z)
        norm = np.linalg.norm(w)
        if norm > 0:
            candidates.append((-eps * y / norm) * w[None, :])
    Z = np.vstack([np.atleast_2d(c) for c in candidates])
    return float(np.max(spec.value(y * ((x[None, :] + Z) @ w))))


def spectral_norm(X, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest singular value of ``X`` by power iteration on ``X^T X``."""
    X = np.asarray(X, dtype=float)
    G = X.T @ X
    v = np.random.default_rng(seed).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = G @ v
        unorm = np.linalg.norm(u)
        if unorm == 0.0:
            return 0.0
        lam_new = float(v @ u)
        v = u / unorm
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def max_step_size(spec: LossSpec, d: Dataset) -> float:
    """Sufficient step size ``2 / (beta (sigma_max(X) + ||eps||)^2)``."""
    scale = spectral_norm(d.features) + np.linalg.norm(d.budgets)
    if scale == 0.0:
        return float("inf")
    return 2.0 / (spec.smoothness * scale**2)
