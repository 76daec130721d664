"""Training data with per-sample perturbation budgets."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass

import numpy as np

MAX_REDRAWS = 1_000_000


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature rows ``x_i``, labels ``y_i`` in {-1, +1} and budgets ``eps_i >= 0``."""

    features: np.ndarray
    labels: np.ndarray
    budgets: np.ndarray

    def __post_init__(self):
        X = _frozen(self.features)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1))
        y = _frozen(self.labels)
        eps = _frozen(self.budgets)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"features must be a non-empty n x p matrix, got shape {X.shape}")
        n = X.shape[0]
        if y.shape != (n,) or eps.shape != (n,):
            raise ValueError(
                f"labels and budgets must have length {n}, got {y.shape} and {eps.shape}"
            )
        if not np.all((y == 1.0) | (y == -1.0)):
            raise ValueError("labels must be exactly -1 or +1")
        if np.any(~np.isfinite(eps)) or np.any(eps < 0):
            raise ValueError("budgets must be finite and non-negative")
        if np.any(~np.isfinite(X)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "budgets", eps)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def signed_features(self) -> np.ndarray:
        """Rows ``y_i x_i``."""
        return self.labels[:, None] * self.features

    def with_budgets(self, budgets) -> Dataset:
        return Dataset(self.features, self.labels, budgets)

    def with_features(self, features) -> Dataset:
        return Dataset(features, self.labels, self.budgets)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.budgets, other.budgets)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GroundTruth:
    true_weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.true_weights)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("true_weights must be a non-empty vector")
        if abs(np.linalg.norm(w) - 1.0) > 1e-12:
            raise ValueError("true_weights must have unit norm")
        object.__setattr__(self, "true_weights", w)

    def to_dict(self) -> dict:
        return {"true_weights": self.true_weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> GroundTruth:
        return cls(np.asarray(data["true_weights"], dtype=float))


def generate_gaussian(n: int, p: int, seed: int, min_margin: float = 0.0):
    """Draw i.i.d. standard Gaussian rows labeled by a random unit separator.

    Rows with ``|x^T w*| < min_margin`` (or exactly on the boundary) are
    redrawn, so the sample is separable by ``w*`` with at least that margin.
    """
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    if min_margin < 0:
        raise ValueError("min_margin must be non-negative")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(p)
    while np.linalg.norm(w_star) == 0.0:
        w_star = rng.standard_normal(p)
    w_star /= np.linalg.norm(w_star)

    X = rng.standard_normal((n, p))
    redraws = np.zeros(n, dtype=np.int64)
    bad = _rejected(X @ w_star, min_margin)
    while bad.any():
        idx = np.flatnonzero(bad)
        redraws[idx] += 1
        if redraws.max() > MAX_REDRAWS:
            raise GenerationError(
                f"could not draw a sample with margin >= {min_margin} in {MAX_REDRAWS} redraws"
            )
        X[idx] = rng.standard_normal((idx.size, p))
        bad[idx] = _rejected(X[idx] @ w_star, min_margin)

    y = np.sign(X @ w_star)
    return Dataset(X, y, np.zeros(n)), GroundTruth(w_star)


def _rejected(margins, min_margin):
    return (np.abs(margins) < min_margin) | (margins == 0.0)


@dataclass(frozen=True)
class Uniform:
    eps: float


@dataclass(frozen=True)
class Fraction:
    q: float
    eps: float
    seed: int = 0


@dataclass(frozen=True)
class UniformRandom:
    lo: float
    hi: float
    seed: int = 0


BudgetScheme = Uniform | Fraction | UniformRandom


def assign_budgets(d: Dataset, scheme: BudgetScheme) -> Dataset:
    n = d.n
    if isinstance(scheme, Uniform):
        _check_nonneg(eps=scheme.eps)
        eps = np.full(n, float(scheme.eps))
    elif isinstance(scheme, Fraction):
        _check_nonneg(eps=scheme.eps, q=scheme.q)
        if scheme.q > 1:
            raise ValueError("fraction q must lie in [0, 1]")
        k = math.floor(scheme.q * n + 1e-9)
        chosen = np.random.default_rng(scheme.seed).choice(n, size=k, replace=False)
        eps = np.zeros(n)
        eps[chosen] = float(scheme.eps)
    elif isinstance(scheme, UniformRandom):
        _check_nonneg(lo=scheme.lo, hi=scheme.hi)
        if scheme.hi < scheme.lo:
            raise ValueError("uniform_random requires lo <= hi")
        eps = np.random.default_rng(scheme.seed).uniform(scheme.lo, scheme.hi, size=n)
    else:
        raise TypeError(f"unknown budget scheme {scheme!r}")
    return d.with_budgets(eps)


def _check_nonneg(**values):
    for name, v in values.items():
        if not (v >= 0) or not math.isfinite(v):
            raise ValueError(f"{name} must be a finite non-negative number, got {v}")


def parse_scheme(text: str, seed: int = 0) -> BudgetScheme:
    """Parse ``uniform:EPS``, ``fraction:Q:EPS`` or ``uniform_random:LO:HI``.

    An optional trailing ``:SEED`` on the random schemes overrides ``seed``.
    """
    kind, *args = text.strip().split(":")
    try:
        vals = [float(a) for a in args]
    except ValueError as exc:
        raise ValueError(f"bad budget scheme {text!r}") from exc
    if kind == "uniform" and len(vals) == 1:
        return Uniform(vals[0])
    if kind == "fraction" and len(vals) in (2, 3):
        return Fraction(vals[0], vals[1], int(vals[2]) if len(vals) == 3 else seed)
    if kind == "uniform_random" and len(vals) in (2, 3):
        return UniformRandom(vals[0], vals[1], int(vals[2]) if len(vals) == 3 else seed)
    raise ValueError(f"bad budget scheme {text!r}")


def apply_adversarial_shift(d: Dataset, g: GroundTruth) -> Dataset:
    """Move every row toward the true boundary: ``x_i - eps_i y_i w*``."""
    w_star = g.true_weights
    if w_star.shape != (d.p,):
        raise ValueError("ground truth dimension does not match the dataset")
    shifted = d.features - (d.budgets * d.labels)[:, None] * w_star[None, :]
    return d.with_features(shifted)


def is_linearly_separable(d: Dataset) -> bool:
    from .solvers import max_margin

    return max_margin(d).status == "optimal"


def _format_float(v: float) -> str:
    return repr(float(v))


def dumps_csv(d: Dataset, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["y", "eps"] + [f"x{j + 1}" for j in range(d.p)])
    for yi, ei, xi in zip(d.labels, d.budgets, d.features):
        writer.writerow([str(int(yi)), _format_float(ei)] + [_format_float(v) for v in xi])
    return buf.getvalue()


def save_csv(d: Dataset, path, comment: str | None = None) -> None:
    """Write ``y,eps,x1,...,xp`` rows. ``comment`` lines are prefixed with ``#``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_csv(d, comment))


def loads_csv(text: str) -> Dataset:
    rows = []
    header = None
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = next(csv.reader([line]))
        if header is None:
            header = [f.strip() for f in fields]
            p = len(header) - 2
            if p < 1 or header[:2] != ["y", "eps"] or header[2:] != [
                f"x{j + 1}" for j in range(p)
            ]:
                raise DatasetFormatError(f"line {lineno}: expected header y,eps,x1,...,xp")
            continue
        if len(fields) != len(header):
            raise DatasetFormatError(
                f"line {lineno}: expected {len(header)} fields, got {len(fields)}"
            )
        try:
            vals = [float(f) for f in fields]
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: non-numeric field") from exc
        if not all(math.isfinite(v) for v in vals):
            raise DatasetFormatError(f"line {lineno}: non-finite value")
        if vals[0] not in (1.0, -1.0):
            raise DatasetFormatError(f"line {lineno}: label must be -1 or +1, got {fields[0]}")
        if vals[1] < 0:
            raise DatasetFormatError(f"line {lineno}: negative budget {fields[1]}")
        rows.append(vals)
    if header is None:
        raise DatasetFormatError("missing header")
    if not rows:
        raise DatasetFormatError("no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, 2:], arr[:, 0], arr[:, 1])


def load_csv(path) -> Dataset:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_csv(fh.read())
