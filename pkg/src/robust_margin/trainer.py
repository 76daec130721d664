"""Full-batch gradient descent on the robust loss with checkpointed diagnostics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .loss import ZERO_NORM, DomainError, LossSpec, margin_gradient, max_step_size

log = logging.getLogger(__name__)

DEFAULT_INIT_SCALE = 1e-3
# loss growth (relative to the initial loss) treated as divergence
DIVERGENCE_FACTOR = 1e3


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


def geometric_schedule(max_iters: int, ratio: float = 1.3) -> list[int]:
    """``0, 1, 2, ...`` growing by ``ratio`` and always ending at ``max_iters``."""
    if max_iters < 0:
        raise ValueError("max_iters must be non-negative")
    points = {0, max_iters}
    t = 1.0
    while t < max_iters:
        points.add(int(t))
        t = max(t * ratio, t + 1)
    return sorted(points)


@dataclass(frozen=True)
class GDConfig:
    step_size: float
    max_iters: int
    checkpoint_schedule: Sequence[int] | None = None
    initial_weights: np.ndarray | str = "default"

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        sched = (
            geometric_schedule(self.max_iters)
            if self.checkpoint_schedule is None
            else [int(t) for t in self.checkpoint_schedule]
        )
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("checkpoint indices must be strictly increasing")
        if sched and (sched[0] < 0 or sched[-1] > self.max_iters):
            raise ValueError("checkpoint indices must lie in [0, max_iters]")
        object.__setattr__(self, "checkpoint_schedule", tuple(sched))


@dataclass(frozen=True, eq=False)
class Checkpoint:
    t: int
    weights: np.ndarray
    loss: float
    grad_norm: float
    weight_norm: float
    s_value: float
    robust_margins: np.ndarray

    @property
    def min_robust_margin(self) -> float:
        return float(np.min(self.robust_margins))


@dataclass(frozen=True, eq=False)
class Trajectory:
    checkpoints: tuple[Checkpoint, ...]
    step_size: float
    reference: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.checkpoints)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([c.t for c in self.checkpoints])

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weights for c in self.checkpoints])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(c, name) for c in self.checkpoints], dtype=float)

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]


def default_initial_weights(d: Dataset) -> np.ndarray:
    """``1e-3 * X_bar / ||X_bar||`` with ``X_bar = sum_i y_i x_i``."""
    xbar = d.signed_features.sum(axis=0)
    norm = np.linalg.norm(xbar)
    if norm < ZERO_NORM:
        xbar = np.zeros(d.p)
        xbar[0] = 1.0
        norm = 1.0
    return DEFAULT_INIT_SCALE * xbar / norm


def direction(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise DomainError("direction of the zero vector is undefined")
    return w / norm


def s_sequence(traj: Trajectory, reference, eta: float) -> np.ndarray:
    """``reference^T w_t / eta`` at every checkpoint."""
    ref = np.asarray(reference, dtype=float)
    if not np.any(ref):
        raise DomainError("reference must be nonzero")
    return traj.weights @ ref / eta


def train(spec: LossSpec, d: Dataset, cfg: GDConfig, reference=None) -> Trajectory:
    """Run ``cfg.max_iters`` steps of ``w <- w - eta * grad L_eps(w)``."""
    eta = cfg.step_size
    bound = max_step_size(spec, d)
    if eta >= bound:
        log.warning("step size %.6g is not below the sufficient bound %.6g", eta, bound)

    if isinstance(cfg.initial_weights, str):
        if cfg.initial_weights != "default":
            raise ValueError(f"unknown initialisation {cfg.initial_weights!r}")
        w = default_initial_weights(d)
    else:
        w = np.array(cfg.initial_weights, dtype=float)
        if w.shape != (d.p,):
            raise ValueError(f"initial weights must have shape ({d.p},)")

    A = d.signed_features
    eps = d.budgets
    perturbed = bool(np.any(eps > 0))
    loss_fn = spec.value
    schedule = cfg.checkpoint_schedule
    wanted = set(schedule)
    records = []

    loss0 = None
    for t in range(cfg.max_iters + 1):
        if perturbed and np.linalg.norm(w) < ZERO_NORM:
            raise DomainError(f"iterate reached w = 0 at iteration {t}")
        margins, norm, grad = margin_gradient(spec, A, eps, w)
        if t in wanted or t == 0:
            loss = float(np.sum(loss_fn(margins)))
            if loss0 is None:
                loss0 = loss
            gnorm = float(np.linalg.norm(grad))
            if not (np.isfinite(loss) and np.isfinite(gnorm)):
                raise DivergenceError(t, "non-finite loss or gradient")
            if loss > DIVERGENCE_FACTOR * max(loss0, 1.0):
                raise DivergenceError(t, f"loss {loss:.3e} exceeds {DIVERGENCE_FACTOR:g}x its initial value")
            if t in wanted:
                records.append((t, w.copy(), loss, gnorm, norm, margins.copy()))
        if t == cfg.max_iters:
            break
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(t, "non-finite gradient")
        w = w - eta * grad

    if reference is not None:
        ref = np.asarray(reference, dtype=float)
    else:
        ref = direction(records[-1][1]) if records else None
    checkpoints = tuple(
        Checkpoint(
            t=t,
            weights=wt,
            loss=loss,
            grad_norm=gnorm,
            weight_norm=norm,
            s_value=float(ref @ wt / eta) if ref is not None else float("nan"),
            robust_margins=margins,
        )
        for t, wt, loss, gnorm, norm, margins in records
    )
    return Trajectory(
        checkpoints=checkpoints,
        step_size=eta,
        reference=ref,
        meta={"step_bound": bound, "reference_given": reference is not None},
    )


TRAJECTORY_COLUMNS = ("t", "loss", "grad_norm", "weight_norm", "s_value", "min_robust_margin")


def save_trajectory_csv(traj: Trajectory, path, weights_path=None, comment: str | None = None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for c in traj.checkpoints:
            writer.writerow(
                [c.t, repr(c.loss), repr(c.grad_norm), repr(c.weight_norm), repr(c.s_value), repr(c.min_robust_margin)]
            )
    if weights_path is not None:
        p = traj.checkpoints[0].weights.size if traj.checkpoints else 0
        with open(weights_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t"] + [f"w{j + 1}" for j in range(p)])
            for c in traj.checkpoints:
                writer.writerow([c.t] + [repr(float(v)) for v in c.weights])


def load_trajectory_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return [{k: (int(v) if k == "t" else float(v)) for k, v in row.items()} for row in reader]
