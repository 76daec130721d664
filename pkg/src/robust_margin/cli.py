"""``robust-margin`` command line: data generation, training, solving and experiments.

Exit codes: 0 success, 1 check or validation failure, 2 infeasible,
3 divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetFormatError, assign_budgets, generate_gaussian, load_csv, parse_scheme, save_csv
from .loss import DomainError, logistic, max_step_size
from .solvers import (
    INFEASIBLE,
    InfeasibleError,
    constraint_slack,
    kkt_residual,
    max_margin,
    rm_solve,
    support_vectors,
    theta,
)
from .trainer import DivergenceError, GDConfig, geometric_schedule, save_trajectory_csv, train

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INFEASIBLE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

PROG = "robust-margin"
NOT_CONFIG = {"command", "func", "config", "verbose"}


def _resolved(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in NOT_CONFIG}
    return {"command": args.command, **cfg}


def _header(args) -> str:
    return f"{PROG} {__version__} config={json.dumps(_resolved(args), sort_keys=True)}"


def _dump_json(path, payload: dict, args):
    doc = {"version": __version__, "config": _resolved(args), **payload}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _sibling(path: str, suffix: str) -> str:
    p = Path(path)
    return str(p.with_name(p.stem + suffix))


def cmd_gen_data(args) -> int:
    d, g = generate_gaussian(args.n, args.p, args.seed, args.min_margin)
    d = assign_budgets(d, parse_scheme(args.eps_scheme, args.seed))
    save_csv(d, args.out, comment=_header(args))
    truth = args.truth or _sibling(args.out, ".truth.json")
    _dump_json(truth, g.to_dict(), args)
    print(f"wrote {d.n} rows to {args.out} and ground truth to {truth}")
    return EXIT_OK


def _load_reference(path) -> np.ndarray:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("status", "optimal") != "optimal":
        raise ValueError(f"reference in {path} has status {data['status']!r}")
    return np.asarray(data["weights"], dtype=float)


def cmd_train(args) -> int:
    d = load_csv(args.data)
    spec = logistic()
    bound = max_step_size(spec, d)
    eta = 0.9 * bound if args.eta == "auto" else float(args.eta)
    ref = _load_reference(args.reference) if args.reference else None
    if ref is not None and ref.shape != (d.p,):
        raise ValueError(f"reference has {ref.size} weights, data has p={d.p}")
    cfg = GDConfig(eta, args.iters, geometric_schedule(args.iters, args.ratio))
    traj = train(spec, d, cfg, reference=ref)
    save_trajectory_csv(traj, args.out, weights_path=args.weights, comment=_header(args))
    final = traj.final
    final_path = args.final or _sibling(args.out, ".final.json")
    _dump_json(
        final_path,
        {
            "step_size": eta,
            "step_bound": bound,
            "iterations": final.t,
            "weights": final.weights.tolist(),
            "loss": final.loss,
            "grad_norm": final.grad_norm,
            "weight_norm": final.weight_norm,
            "min_robust_margin": final.min_robust_margin,
        },
        args,
    )
    print(f"step size        {eta:.6g} (bound {bound:.6g})")
    print(f"final grad_norm  {final.grad_norm:.6e}")
    print(f"min robust margin {final.min_robust_margin:.6e}")
    print(f"||w_T||          {final.weight_norm:.6e}")
    return EXIT_OK


def cmd_solve(args) -> int:
    d = load_csv(args.data)
    mm = max_margin(d)
    bound = 1.0 / mm.objective_norm if mm.optimal else None
    sol = mm if args.which == "mm" else rm_solve(d, mm)
    payload = {"solution": sol.to_dict(), "existence_bound": bound}
    if sol.optimal:
        slack = constraint_slack(sol, d)
        residuals = {
            "kkt_residual": kkt_residual(sol, d),
            "min_slack": float(np.min(slack)),
            "support_size": len(support_vectors(sol, d)),
            "theta": theta(sol, d),
        }
        payload["residuals"] = residuals
    # flatten so the file loads directly with MarginSolution.from_dict
    payload.update(payload.pop("solution"))
    _dump_json(args.out, payload, args)

    print(f"status           {sol.status}")
    print(f"existence bound  {bound if bound is not None else 'n/a (not separable)'}")
    if not sol.optimal:
        return EXIT_INFEASIBLE if sol.status == INFEASIBLE else EXIT_FAILED
    r = payload["residuals"]
    print(f"||w||            {sol.objective_norm:.10g}")
    print(f"|S|              {r['support_size']}")
    print(f"KKT residual     {r['kkt_residual']:.3e}")
    print(f"theta            {r['theta']:.6g}")
    return EXIT_OK


def _prefix(out: str) -> Path:
    p = Path(out)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def cmd_fig1(args) -> int:
    from .experiments import Fig1Config, run_fig1

    cfg = Fig1Config(
        trials=args.trials,
        n=args.n,
        p=args.p,
        fraction=args.fraction,
        levels=args.levels,
        top_fraction=args.top_fraction,
        shift=not args.no_shift,
        test_perturbed=args.test_perturbed,
        test_samples=args.test_samples,
        seed=args.seed,
        min_margin=args.min_margin,
    )
    report = run_fig1(cfg, workers=args.workers)
    report.meta.update(version=__version__, cli=_resolved(args))
    base = _prefix(args.out)
    report.write_summary_csv(f"{base}_summary.csv", comment=_header(args))
    report.write_records_csv(f"{base}_trials.csv", comment=_header(args))
    Path(f"{base}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"{'level':>5} {'eps/bound':>9} {'GE_mm':>9} {'GE_rm':>9} {'excluded':>8}")
    for row in report.summary:
        print(
            f"{row['level']:>5} {row['eps_fraction']:>9.3f} {row['ge_mm_mean']:>9.4f} "
            f"{row['ge_rm_mean']:>9.4f} {row['excluded']:>8}"
        )
    return EXIT_OK


def cmd_fig2(args) -> int:
    from .experiments import Fig2Config, run_fig2

    cfg = Fig2Config(
        seeds=tuple(args.seeds),
        n=args.n,
        p=args.p,
        iters=args.iters,
        eta_factor=args.eta_factor,
        early_t=args.early_t,
        min_margin=args.min_margin,
    )
    report = run_fig2(cfg, workers=args.workers)
    report.meta.update(version=__version__, cli=_resolved(args))
    base = _prefix(args.out)
    report.write_records_csv(f"{base}_checkpoints.csv", comment=_header(args))
    Path(f"{base}_summary.json").write_text(
        json.dumps({"meta": report.meta, "summary": report.summary}, indent=2, default=float) + "\n",
        encoding="utf-8",
    )
    for s in report.summary:
        if s["rm_status"] != "optimal":
            print(f"seed {s['seed']}: RM classifier {s['rm_status']}, skipped")
            continue
        print(
            f"seed {s['seed']}: mm-rm gap {s['mm_rm_gap']:.4f}  "
            f"d_RM(t={cfg.early_t}) {s['dist_rm_early']:.4f}  d_RM(T) {s['dist_rm_final']:.4f}  "
            f"d_MM(T) {s['dist_mm_final']:.4f}  R2 {s['fit_r_squared']:.3f}"
        )
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks(quick=args.quick, only=args.only, out=sys.stdout)
    failed = [r.name for r in results if not r.passed]
    if not results:
        print("no checks selected", file=sys.stderr)
        return EXIT_FAILED
    if failed:
        print(f"{len(failed)} failed: {', '.join(failed)}")
        return EXIT_FAILED
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def _seed_list(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _eta(text: str):
    if text == "auto":
        return text
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("eta must be positive or 'auto'")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file of flag values; explicit flags win")
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "generate a separable Gaussian dataset")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-margin", type=float, default=0.0)
    p.add_argument("--eps-scheme", default="uniform:0", help="uniform:E, fraction:Q:E[:SEED] or uniform_random:LO:HI[:SEED]")
    p.add_argument("--out", default="data.csv")
    p.add_argument("--truth", help="ground-truth JSON path (default: <out>.truth.json)")

    p = command("train", cmd_train, "gradient descent on the robust logistic loss")
    p.add_argument("--data", default="data.csv")
    p.add_argument("--eta", type=_eta, default="auto", help="step size, or 'auto' for 0.9x the sufficient bound")
    p.add_argument("--iters", type=int, default=100_000)
    p.add_argument("--ratio", type=float, default=1.3, help="checkpoint spacing ratio")
    p.add_argument("--reference", help="solution JSON whose weights define s_t")
    p.add_argument("--out", default="trajectory.csv")
    p.add_argument("--final", help="final-weights JSON path (default: <out>.final.json)")
    p.add_argument("--weights", help="optional CSV of the weights at every checkpoint")

    p = command("solve", cmd_solve, "max-margin or robust max-margin classifier")
    p.add_argument("--data", default="data.csv")
    p.add_argument("--which", choices=("mm", "rm"), default="rm")
    p.add_argument("--out", default="solution.json")

    p = command("fig1", cmd_fig1, "generalization error of MM and RM across budget levels")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--levels", type=int, default=8)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=40)
    p.add_argument("--fraction", type=float, default=0.4)
    p.add_argument("--top-fraction", type=float, default=0.9, help="largest level as a fraction of 1/||w_M||")
    p.add_argument("--no-shift", action="store_true", help="keep the perturbed points unshifted")
    p.add_argument("--test-perturbed", action="store_true", help="measure error on a shifted Monte Carlo test set")
    p.add_argument("--test-samples", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-margin", type=float, default=0.0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="fig1")

    p = command("fig2", cmd_fig2, "direction convergence of GD toward the RM classifier")
    p.add_argument("--seeds", type=_seed_list, default=[0], help="comma-separated seeds")
    p.add_argument("--iters", type=int, default=1_000_000)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--eta-factor", type=float, default=0.9)
    p.add_argument("--early-t", type=int, default=1000)
    p.add_argument("--min-margin", type=float, default=0.0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="fig2")

    p = command("check", cmd_check, "run the invariant suite")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--only", nargs="*", help="name prefixes of the checks to run")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]):
    """Parse ``argv``; values from ``--config`` fill in flags not given explicitly."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise ValueError(f"{args.config}: expected a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items() if k != "command"}
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[args.command]
    known = {a.dest for a in subparser._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ValueError(f"{args.config}: unknown keys for {args.command}: {', '.join(unknown)}")
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DatasetFormatError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
