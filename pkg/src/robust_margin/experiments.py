"""Generalization-error sweep over budgets and GD direction-convergence runs."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .analysis import (
    ExperimentReport,
    aggregate,
    direction_distance,
    empirical_error,
    generalization_error,
    log_rate_fit,
    mean_and_se,
)
from .dataset import (
    Dataset,
    Fraction,
    GroundTruth,
    UniformRandom,
    apply_adversarial_shift,
    assign_budgets,
    generate_gaussian,
)
from .loss import logistic, max_step_size
from .solvers import max_margin, rm_solve
from .trainer import GDConfig, geometric_schedule, train

THREADS_ENV = "ROBUST_MARGIN_THREADS"


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get(THREADS_ENV)
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class Fig1Config:
    trials: int = 20
    n: int = 100
    p: int = 40
    fraction: float = 0.4
    levels: int = 8
    top_fraction: float = 0.9
    shift: bool = True
    test_perturbed: bool = False
    test_samples: int = 20_000
    seed: int = 0
    min_margin: float = 0.0


def _perturbed_test_set(cfg: Fig1Config, g: GroundTruth, eps: float, seed: int) -> Dataset:
    rng = np.random.default_rng([seed, 1])
    X = rng.standard_normal((cfg.test_samples, g.true_weights.size))
    margins = X @ g.true_weights
    X = X[margins != 0]
    y = np.sign(X @ g.true_weights)
    test = Dataset(X, y, np.zeros(len(y)))
    test = assign_budgets(test, Fraction(cfg.fraction, eps, seed + 1))
    return apply_adversarial_shift(test, g)


def fig1_trial(args) -> list[dict]:
    cfg, seed = args
    clean, g = generate_gaussian(cfg.n, cfg.p, seed, cfg.min_margin)
    mm_clean = max_margin(clean)
    if not mm_clean.optimal:
        raise RuntimeError(f"seed {seed}: generated data is not separable")
    bound = 1.0 / mm_clean.objective_norm
    rows = []
    for level in range(cfg.levels):
        frac = cfg.top_fraction * level / max(cfg.levels - 1, 1)
        eps = frac * bound
        d = assign_budgets(clean, Fraction(cfg.fraction, eps, seed))
        if cfg.shift:
            d = apply_adversarial_shift(d, g)
            mm = max_margin(d)
        else:
            mm = mm_clean
        rm = rm_solve(d, mm) if mm.optimal else None
        ok = mm.optimal and rm is not None and rm.optimal
        row = {
            "seed": seed,
            "level": level,
            "eps_fraction": frac,
            "eps": eps,
            "shifted": cfg.shift,
            "mm_status": mm.status,
            "rm_status": rm.status if rm is not None else "skipped",
            "ge_mm": float("nan"),
            "ge_rm": float("nan"),
            "mm_rm_distance": float("nan"),
        }
        if mm.optimal:
            row["ge_mm"] = _error(cfg, mm.weights, g, eps, seed)
        if ok:
            row["ge_rm"] = _error(cfg, rm.weights, g, eps, seed)
            row["mm_rm_distance"] = direction_distance(mm.weights, rm.weights)
        rows.append(row)
    return rows


def _error(cfg: Fig1Config, w, g: GroundTruth, eps: float, seed: int) -> float:
    if cfg.test_perturbed:
        return empirical_error(w, _perturbed_test_set(cfg, g, eps, seed))
    return generalization_error(w, g)


def run_fig1(cfg: Fig1Config = Fig1Config(), workers: int | None = None) -> ExperimentReport:
    """Max-margin vs RM generalization error across a grid of budget levels.

    The grid runs from 0 to ``top_fraction / ||w_M||`` of each trial's clean
    data. Trials where either classifier is unavailable at a level are kept
    in the records but excluded from that level's means.
    """
    seeds = [cfg.seed + k for k in range(cfg.trials)]
    per_trial = _map(fig1_trial, [(cfg, s) for s in seeds], worker_count(workers))
    records = [row for rows in per_trial for row in rows]
    report = aggregate(
        records,
        metrics=("ge_mm", "ge_rm"),
        include=lambda r: r["mm_status"] == "optimal" and r["rm_status"] == "optimal",
    )
    report.meta = {"experiment": "fig1", "config": asdict(cfg)}
    return report


@dataclass(frozen=True)
class Fig2Config:
    seeds: tuple[int, ...] = (0,)
    n: int = 30
    p: int = 10
    iters: int = 1_000_000
    eta_factor: float = 0.9
    early_t: int = 1000
    min_margin: float = 0.0


def fig2_instance(n: int, p: int, seed: int, min_margin: float = 0.0):
    """Gaussian data with budgets ``eps_i ~ Unif(0, 1/||w_M||)``; returns (data, truth, w_M, w_RM)."""
    clean, g = generate_gaussian(n, p, seed, min_margin)
    mm = max_margin(clean)
    d = assign_budgets(clean, UniformRandom(0.0, 1.0 / mm.objective_norm, seed))
    return d, g, mm, rm_solve(d, mm)


def fig2_run(args) -> dict:
    cfg, seed = args
    d, g, mm, rm = fig2_instance(cfg.n, cfg.p, seed, cfg.min_margin)
    if not rm.optimal:
        return {"seed": seed, "rm_status": rm.status, "rows": []}
    spec = logistic()
    eta = cfg.eta_factor * max_step_size(spec, d)
    schedule = sorted(set(geometric_schedule(cfg.iters)) | ({cfg.early_t} if cfg.early_t <= cfg.iters else set()))
    traj = train(spec, d, GDConfig(eta, cfg.iters, schedule), reference=rm.weights)
    rows = []
    for c in traj.checkpoints:
        rows.append(
            {
                "seed": seed,
                "t": c.t,
                "dist_rm": direction_distance(c.weights, rm.weights),
                "dist_mm": direction_distance(c.weights, mm.weights),
                "loss": c.loss,
                "grad_norm": c.grad_norm,
                "weight_norm": c.weight_norm,
                "s_value": c.s_value,
                "min_robust_margin": c.min_robust_margin,
            }
        )
    ts = [r["t"] for r in rows]
    fit = log_rate_fit(ts, [r["dist_rm"] for r in rows])
    early = next((r for r in rows if r["t"] == cfg.early_t), None)
    final = rows[-1]
    return {
        "seed": seed,
        "rm_status": rm.status,
        "eta": eta,
        "mm_rm_gap": direction_distance(mm.weights, rm.weights),
        "rm_norm": rm.objective_norm,
        "mm_norm": mm.objective_norm,
        "fit_coefficient": fit.coefficient,
        "fit_r_squared": fit.r_squared,
        "fit_points": fit.checkpoints_used,
        "dist_rm_early": early["dist_rm"] if early else float("nan"),
        "dist_rm_final": final["dist_rm"],
        "dist_mm_final": final["dist_mm"],
        "final_grad_norm": final["grad_norm"],
        "final_min_robust_margin": final["min_robust_margin"],
        "s_increasing": bool(np.all(np.diff([r["s_value"] for r in rows]) > 0)),
        "rows": rows,
    }


def run_fig2(cfg: Fig2Config = Fig2Config(), workers: int | None = None) -> ExperimentReport:
    """GD on the robust logistic loss, tracking the direction gap to w_RM and w_M."""
    results = _map(fig2_run, [(cfg, s) for s in cfg.seeds], worker_count(workers))
    results.sort(key=lambda r: r["seed"])
    records = [row for r in results for row in r["rows"]]
    summary = [{k: v for k, v in r.items() if k != "rows"} for r in results]
    ratios = [
        s["dist_rm_final"] / s["dist_rm_early"]
        for s in summary
        if s.get("dist_rm_early", 0) and math.isfinite(s.get("dist_rm_early", float("nan")))
    ]
    meta = {"experiment": "fig2", "config": asdict(cfg)}
    if ratios:
        meta["final_to_early_ratio_mean"], meta["final_to_early_ratio_se"] = mean_and_se(ratios)
    return ExperimentReport(records=records, summary=summary, meta=meta)
