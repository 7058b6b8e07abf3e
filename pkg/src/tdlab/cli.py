"""Command-line entry point.

Subcommands: ``validate`` a config, ``solve`` the analytic ground truth,
``simulate`` one trajectory to CSV, ``bound`` evaluate the radius curve
and probability bound, and ``experiment`` run the Monte Carlo all-time
verification.  Every command is deterministic given (config, flags); all
JSON is written with sorted keys so reruns are byte-identical.  Timings
go to stderr only.

Exit codes: 0 success, 1 validation failure, 2 runtime numerical failure.
The only environment override is ``OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .bounds import build_query, check_n0, evaluate_bound
from .config import LoadedConfig, load_config
from .dynamics import run_online
from .errors import ComputeError, ValidationError
from .harness import convergence_diagnostics, estimate_p_init, run_alltime_experiment
from .rng import stream


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _out_dir(args, cfg: LoadedConfig) -> Path:
    if getattr(args, "out", None):
        d = Path(args.out)
    elif os.environ.get("OUTPUT_DIR"):
        d = Path(os.environ["OUTPUT_DIR"])
    else:
        d = Path(cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load(args) -> LoadedConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None and cfg.experiment is not None:
        cfg.experiment.master_seed = args.seed
    if getattr(args, "horizon", None) is not None and cfg.experiment is not None:
        exp = cfg.experiment
        if args.horizon <= exp.n0:
            raise ValidationError(
                f"--horizon {args.horizon} must exceed the start index {exp.n0}"
            )
        exp.horizon = args.horizon
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    rep = cfg.problem.assumption
    print(f"chain: {cfg.problem.n_states} states, valid")
    pi = cfg.problem.stationary.pi
    print(f"stationary: residual ok, min {pi.min():.6g}, max {pi.max():.6g}")
    print(f"features: {cfg.problem.n_features} columns, full rank")
    print(f"feature gain: {rep.feature_gain:.10g}")
    print(f"threshold: {rep.threshold:.10g}")
    print(f"scaling condition: {'pass' if rep.satisfied else 'FAIL'}")
    if not rep.satisfied:
        print(f"suggested rescaling factor: {rep.rescaling_factor:.10g}")
    print(
        f"row-norm condition: {'pass' if rep.row_condition_satisfied else 'not met'} "
        f"(max row norm {rep.max_row_norm:.10g})"
    )
    sched = cfg.schedule
    print(f"schedule: {sched.kind} (d1={sched.d1:g}, d2={sched.d2:g}, d3={sched.d3:g})")
    if cfg.analytic is not None:
        print(f"contraction factor: {cfg.analytic.constants.alpha:.10g}")
        if cfg.experiment is not None:
            chk = check_n0(cfg.analytic.constants, sched, cfg.experiment.n0)
            print(
                f"start index {cfg.experiment.n0}: "
                f"{'feasible' if chk.feasible else 'INFEASIBLE'} "
                f"(margin {chk.margin:.6g}, smallest feasible {chk.smallest_feasible})"
            )
    for issue in cfg.issues:
        print(f"issue: {issue}")
    return 1 if cfg.issues else 0


def cmd_solve(args) -> int:
    cfg = _load(args)
    analytic = cfg.require_analytic()
    out = _out_dir(args, cfg)
    path = out / "analytic.json"
    _write_json(path, analytic.as_dict())
    print(path)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args)
    analytic = cfg.require_analytic()
    exp = cfg.require_experiment()
    rng = stream(exp.master_seed, args.trajectory)
    u0 = rng.random()
    s = cfg.problem.n_states
    policy = exp.initial_state_policy
    if policy.startswith("fixed:"):
        y0 = exp.fixed_initial_state()
    elif policy == "uniform":
        y0 = min(int(u0 * s), s - 1)
    else:
        y0 = min(int(np.searchsorted(np.cumsum(analytic.stationary.pi), u0, side="right")), s - 1)
    record = run_online(
        cfg.problem,
        cfg.schedule,
        0,
        exp.horizon,
        exp.initial_x,
        y0,
        rng,
        x_star=analytic.x_star,
    )
    out = _out_dir(args, cfg)
    path = out / f"trajectory_{args.trajectory}.csv"
    record.to_csv(path, include_components=args.components)
    print(path)
    return 0


def cmd_bound(args) -> int:
    cfg = _load(args)
    analytic = cfg.require_analytic()
    exp = cfg.require_experiment()
    d_const = args.D if args.D is not None else exp.D_const
    if d_const is None:
        raise ValidationError(
            "no tail-exponent constant: set experiment.D_const, pass --D, "
            "or run the experiment command to fit one"
        )
    if cfg.p_init_user is not None:
        p_init, source = cfg.p_init_user, "user"
    else:
        est = estimate_p_init(exp, jobs=args.jobs, analytic=analytic)
        p_init, source = est.value, "empirical"
    query = build_query(
        analytic.constants,
        cfg.schedule,
        epsilon=exp.epsilon,
        delta=exp.delta,
        n0=exp.n0,
        horizon=None if args.infinite else exp.horizon,
        D_const=d_const,
        p_init=p_init,
        p_init_source=source,
    )
    report = evaluate_bound(
        query, cfg.problem.n_features, cfg.schedule, analytic.constants,
        curve_horizon=exp.horizon,
    )
    out = _out_dir(args, cfg)
    _write_json(out / "bound.json", report.as_dict())
    if "csv" in cfg.formats:
        report.to_csv(out / "bound.csv", cfg.schedule)
    if report.tail.vacuous:
        print("warning: vacuous bound (tail sum and initial term exceed 1)", file=sys.stderr)
    print(out / "bound.json")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args)
    analytic = cfg.require_analytic()
    exp = cfg.require_experiment()
    t0 = time.monotonic()
    result = run_alltime_experiment(exp, jobs=args.jobs, analytic=analytic)
    diag = convergence_diagnostics(exp, jobs=args.jobs, analytic=analytic)
    out = _out_dir(args, cfg)
    payload = result.as_dict()
    payload["diagnostics"] = diag.as_dict()
    _write_json(out / "result.json", payload)
    if "csv" in cfg.formats:
        _write_per_m_csv(out / "per_m.csv", result)
        _write_summary_csv(out / "summary.csv", result)
    print(
        f"alltime {result.empirical_alltime_prob:.6f} "
        f">= bound {result.theoretical_lower_bound:.6f}"
        if result.empirical_alltime_prob >= result.theoretical_lower_bound
        else f"alltime {result.empirical_alltime_prob:.6f} "
        f"< bound {result.theoretical_lower_bound:.6f}"
    )
    print(f"elapsed {time.monotonic() - t0:.1f}s", file=sys.stderr)
    return 0


def _write_per_m_csv(path: Path, result) -> None:
    q = result.err_quantiles
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["m", "radius", "err_max", "err_q25", "err_q50", "err_q75", "err_q90", "violations"]
        )
        for i, m in enumerate(range(result.n0, result.horizon + 1)):
            row = [m, repr(float(result.radius[i])), repr(float(result.per_m_err_max[i]))]
            if q is not None:
                row += [repr(float(q[k][i])) for k in ("q25", "q50", "q75", "q90")]
            else:
                row += ["", "", "", ""]
            row.append(int(result.per_m_violation_counts[i]))
            writer.writerow(row)


def _write_summary_csv(path: Path, result) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "epsilon",
                "delta",
                "floor",
                "violations",
                "alltime_prob",
                "wilson_lo",
                "wilson_hi",
                "tail_sum",
                "theoretical_lower_bound",
                "vacuous",
            ]
        )
        for row in result.grid:
            writer.writerow(
                [
                    repr(row.epsilon),
                    repr(row.delta),
                    repr(row.floor),
                    row.violations,
                    repr(row.alltime_prob),
                    repr(row.interval[0]),
                    repr(row.interval[1]),
                    repr(row.tail_sum),
                    repr(row.theoretical_lower_bound),
                    int(row.vacuous),
                ]
            )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdlab",
        description="Analytic ground truth and concentration-bound verification "
        "for linear TD(0) on finite Markov chains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="path to the problem configuration JSON")
        p.add_argument("--out", help="output directory (overrides OUTPUT_DIR and the config)")

    p = sub.add_parser("validate", help="validate a config and print verdicts")
    add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="write the analytic ground-truth JSON")
    add_common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="write one trajectory CSV")
    add_common(p)
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--horizon", type=int, help="override the horizon")
    p.add_argument("--trajectory", type=int, default=0, help="trajectory index (default 0)")
    p.add_argument("--components", action="store_true", help="include iterate components")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bound", help="evaluate the radius curve and probability bound")
    add_common(p)
    p.add_argument("--D", type=float, help="tail-exponent constant (overrides the config)")
    p.add_argument("--infinite", action="store_true", help="sum the tail over all steps")
    p.add_argument("--jobs", type=int, default=1, help="workers for the initial-error estimate")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("experiment", help="run the Monte Carlo all-time verification")
    add_common(p)
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--horizon", type=int, help="override the horizon")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (results invariant)")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ComputeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
