"""Metrics, log-rate fitting and trial aggregation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset, GroundTruth
from .loss import DomainError

MIN_FIT_T = 100
MIN_FIT_POINTS = 5


def _unit(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise DomainError("zero vector has no direction")
    return w / norm


def direction_distance(w1, w2) -> float:
    """``|| w1/||w1|| - w2/||w2|| ||``, in [0, 2]."""
    return float(np.linalg.norm(_unit(w1) - _unit(w2)))


def generalization_error(w, g: GroundTruth) -> float:
    """Disagreement probability of ``sign(w^T x)`` and ``sign(w*^T x)`` for isotropic Gaussian ``x``."""
    u, v = _unit(w), g.true_weights
    angle = 2.0 * math.atan2(np.linalg.norm(u - v), np.linalg.norm(u + v))
    return angle / math.pi


def monte_carlo_error(w, g: GroundTruth, samples: int, seed: int) -> tuple[float, float]:
    """Empirical disagreement rate on fresh Gaussian draws, with its standard error."""
    w = _unit(w)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, w.size))
    wrong = np.sign(X @ w) != np.sign(X @ g.true_weights)
    rate = float(wrong.mean())
    return rate, math.sqrt(rate * (1.0 - rate) / samples)


def empirical_error(w, d: Dataset) -> float:
    """Fraction of rows with ``y_i x_i^T w <= 0``."""
    return float(np.mean(d.signed_features @ np.asarray(w, dtype=float) <= 0))


@dataclass(frozen=True)
class ConvergenceFit:
    coefficient: float
    r_squared: float
    checkpoints_used: int


def log_rate_fit(ts: Sequence[float], distances: Sequence[float], min_t: int = MIN_FIT_T) -> ConvergenceFit:
    """Fit ``d(t) = a / log t`` with ``a`` the mean of ``d(t) log t`` over ``t >= min_t``.

    ``r_squared`` is the coefficient of determination of that model on the
    same points, clipped to [0, 1]. A constant sequence counts as 1 only
    when the model reproduces it exactly.
    """
    ts = np.asarray(ts, dtype=float)
    dist = np.asarray(distances, dtype=float)
    keep = ts >= min_t
    ts, dist = ts[keep], dist[keep]
    if ts.size < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} checkpoints with t >= {min_t}, got {ts.size}")
    logs = np.log(ts)
    a = float(np.mean(dist * logs))
    resid = dist - a / logs
    ss_res = float(resid @ resid)
    centered = dist - dist.mean()
    ss_tot = float(centered @ centered)
    if ss_tot <= 1e-30 * max(1.0, float(dist @ dist)):
        r2 = 1.0 if ss_res <= 1e-30 * max(1.0, float(dist @ dist)) else 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return ConvergenceFit(coefficient=a, r_squared=r2, checkpoints_used=int(ts.size))


def fit_log_rate(traj, target, min_t: int = MIN_FIT_T) -> ConvergenceFit:
    """Log-rate fit of the directional distance between the iterates and ``target``."""
    dist = [direction_distance(c.weights, target) for c in traj.checkpoints]
    return log_rate_fit([c.t for c in traj.checkpoints], dist, min_t)


@dataclass
class ExperimentReport:
    records: list[dict]
    summary: list[dict]
    meta: dict = field(default_factory=dict)

    def write_records_csv(self, path, comment: str | None = None):
        _write_rows(path, self.records, comment)

    def write_summary_csv(self, path, comment: str | None = None):
        _write_rows(path, self.summary, comment)

    def to_json(self) -> str:
        return json.dumps(
            {"meta": self.meta, "summary": self.summary, "records": self.records},
            indent=2,
            default=_json_default,
        )


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, rows: list[dict], comment: str | None):
    columns: list[str] = []
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(k, "")) for k in columns])


def mean_and_se(values: Iterable[float]) -> tuple[float, float]:
    """Sample mean and standard error; the error of a single (or repeated) value is 0."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    if np.all(v == v[0]):
        # exact for repeated values; np.mean can be off by an ulp
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def aggregate(
    trials: list[dict],
    metrics: Sequence[str],
    level_key: str = "level",
    include=lambda r: True,
) -> ExperimentReport:
    """Per-level mean and standard error of each metric.

    Rows are sorted by ``(seed, level)`` first so the result does not depend
    on the order trials finished in. Rows rejected by ``include`` are counted
    but left out of the means.
    """
    if not trials:
        raise ValueError("no trials to aggregate")
    rows = sorted(trials, key=lambda r: (r.get("seed", 0), r[level_key]))
    summary = []
    for level in sorted({r[level_key] for r in rows}):
        at_level = [r for r in rows if r[level_key] == level]
        used = [r for r in at_level if include(r)]
        entry = {level_key: level, "trials": len(at_level), "excluded": len(at_level) - len(used)}
        if "eps_fraction" in at_level[0]:
            entry["eps_fraction"] = at_level[0]["eps_fraction"]
        if "eps" in at_level[0]:
            entry["eps_mean"] = mean_and_se(r["eps"] for r in used)[0]
        for m in metrics:
            mean, se = mean_and_se(r[m] for r in used)
            entry[f"{m}_mean"] = mean
            entry[f"{m}_se"] = se
        summary.append(entry)
    return ExperimentReport(records=rows, summary=summary)
