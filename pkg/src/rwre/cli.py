"""Command-line interface.

Subcommands::

    rwre simulate   --model m.toml --theta 0.2,0.9 --n 1000 --seed 7 --out z.csv
    rwre loglik     --model m.toml --theta 0.2,0.9 --data z.csv [--hessian]
    rwre fit        --model m.toml --data z.csv [--gammas 0.01,0.05,0.1]
    rwre experiment run       --plan plan.toml --out rundir/
    rwre experiment summarize --in rundir/ --out tables/

All randomness is controlled by explicit seeds, and repeated invocations
with equal arguments write byte-identical CSV and JSON (the experiment
manifest's wall_clock_seconds field is the sole exception).  The hidden
chain is conditioned on the support's smallest state unless the model file
or --a0 says otherwise.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, load_model
from .env import diagnose
from .errors import ModelInvalidError, WalkTimeoutError
from .estimate import OptimizerConfig, confidence_region, fit
from .harness import load_plan, read_report, run_experiment, summarize, write_report
from .likelihood import loglik
from .rng import child_seed
from .walk import LeftStepsSequence, left_steps, simulate_environment, simulate_walk


def _parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(part) for part in text.split(",") if part != ""])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _json_print(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _resolve_a0(model, override: Optional[float]) -> int:
    if override is None:
        return model.a0_index
    return model.space.support.index_of(override)


def _read_z(path: str) -> LeftStepsSequence:
    with open(path) as handle:
        header = handle.readline().strip()
        if header != "z":
            raise ConfigError(f"{path}: expected a single-column CSV with header 'z'")
        values = [int(line) for line in handle if line.strip()]
    return LeftStepsSequence(z=np.asarray(values, dtype=np.int64), n=len(values) - 1)


def _write_z(path: str, z: LeftStepsSequence) -> None:
    with open(path, "w") as handle:
        handle.write("z\n")
        handle.write("\n".join(str(int(v)) for v in z.z))
        handle.write("\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_simulate(args) -> int:
    model = load_model(args.model)
    kernel = model.space.kernel(args.theta)
    diag = diagnose(kernel)
    env_path = simulate_environment(kernel, (0, args.n), child_seed(args.seed, 0))
    traj = simulate_walk(
        env_path, kernel, args.n, child_seed(args.seed, 1), max_steps=args.max_steps
    )
    z = left_steps(traj)
    _write_z(args.out, z)
    sidecar = {
        "n": args.n,
        "t_n": traj.hitting_time,
        "seed": args.seed,
        "theta": args.theta.tolist(),
        "diagnostics": asdict(diag),
        "model": os.path.basename(args.model),
    }
    with open(args.out + ".meta.json", "w") as handle:
        json.dump(sidecar, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"wrote {args.out} (n={args.n}, T_n={traj.hitting_time})")
    return 0


def _cmd_loglik(args) -> int:
    model = load_model(args.model)
    z = _read_z(args.data)
    a0 = _resolve_a0(model, args.a0)
    ev = loglik(
        model.space, args.theta, z, a0,
        want_grad=not args.no_grad, want_hessian=args.hessian,
    )
    payload = {
        "loglik": ev.loglik,
        "n": ev.n,
        "theta": args.theta.tolist(),
        "a0": float(model.space.support.values[a0]),
    }
    if ev.grad is not None:
        payload["grad"] = ev.grad.tolist()
    if ev.hessian is not None:
        payload["hessian"] = ev.hessian.tolist()
    _json_print(payload)
    return 0


def _cmd_fit(args) -> int:
    model = load_model(args.model)
    z = _read_z(args.data)
    a0 = _resolve_a0(model, args.a0)
    cfg = OptimizerConfig(
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        n_starts=args.n_starts,
        start_seed=args.start_seed,
    )
    result = fit(model.space, z, a0, cfg)
    payload = {
        "theta_hat": result.theta_hat.tolist(),
        "loglik": result.loglik_at_hat,
        "converged": result.converged,
        "at_boundary": result.at_boundary,
        "n": result.n,
        "a0": float(model.space.support.values[a0]),
        "sigma_hat": result.sigma_hat.tolist() if result.sigma_hat is not None else None,
        "starts": [
            {
                "theta0": s.theta0.tolist(),
                "theta": s.theta.tolist(),
                "loglik": s.loglik,
                "projected_grad_norm": s.projected_grad_norm,
                "iterations": s.iterations,
                "message": s.message,
            }
            for s in result.starts_report
        ],
        "regions": [],
    }
    if result.sigma_hat is not None:
        for gamma in args.gammas:
            region = confidence_region(result, float(gamma))
            lengths, directions = region.axes()
            payload["regions"].append(
                {
                    "gamma": float(gamma),
                    "chi2": region.chi2,
                    "semi_axes": [None if not np.isfinite(v) else v for v in lengths],
                    "directions": directions.tolist(),
                }
            )
    _json_print(payload)
    return 0


def _cmd_experiment_run(args) -> int:
    plan = load_plan(args.plan)
    start = time.perf_counter()
    report = run_experiment(plan)
    wall = time.perf_counter() - start
    write_report(report, args.out, wall)
    failures = report.failure_count
    print(
        f"plan '{plan.name}': {len(report.records)} records, "
        f"{failures} failures, {wall:.1f}s -> {args.out}"
    )
    return 0 if failures == 0 else 1


def _cmd_experiment_summarize(args) -> int:
    report = read_report(args.in_dir)
    tables = summarize(report)
    os.makedirs(args.out, exist_ok=True)
    for name, text in tables.items():
        with open(os.path.join(args.out, name), "w") as handle:
            handle.write(text)
    print(f"wrote {', '.join(sorted(tables))} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rwre",
        description="Simulate ballistic walks in Markov environments and fit their parameters.",
    )
    parser.add_argument("--version", action="version", version=f"rwre {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate a walk and emit its left-steps data")
    sim.add_argument("--model", required=True, help="model TOML file")
    sim.add_argument("--theta", required=True, type=_parse_floats, help="parameter values, comma-separated")
    sim.add_argument("--n", required=True, type=int, help="target site")
    sim.add_argument("--seed", required=True, type=int, help="simulation seed")
    sim.add_argument("--out", required=True, help="output CSV path (sidecar: <out>.meta.json)")
    sim.add_argument("--max-steps", type=int, default=None, help="step budget (default 200*n)")
    sim.set_defaults(func=_cmd_simulate)

    ll = sub.add_parser("loglik", help="evaluate the conditional log-likelihood")
    ll.add_argument("--model", required=True)
    ll.add_argument("--theta", required=True, type=_parse_floats)
    ll.add_argument("--data", required=True, help="left-steps CSV (header 'z')")
    ll.add_argument("--a0", type=float, default=None, help="conditioning state value (default: smallest)")
    ll.add_argument("--no-grad", action="store_true", help="skip the gradient")
    ll.add_argument("--hessian", action="store_true", help="also compute the Hessian")
    ll.set_defaults(func=_cmd_loglik)

    ft = sub.add_parser("fit", help="maximize the likelihood and report confidence regions")
    ft.add_argument("--model", required=True)
    ft.add_argument("--data", required=True)
    ft.add_argument("--a0", type=float, default=None)
    ft.add_argument("--max-iters", type=int, default=200)
    ft.add_argument("--grad-tol", type=float, default=1e-4)
    ft.add_argument("--n-starts", type=int, default=5)
    ft.add_argument("--start-seed", type=int, default=0)
    ft.add_argument("--gammas", type=_parse_floats, default=np.array([0.05]),
                    help="confidence-level complements, comma-separated")
    ft.set_defaults(func=_cmd_fit)

    exp = sub.add_parser("experiment", help="run or summarize a Monte Carlo plan")
    exp_sub = exp.add_subparsers(dest="experiment_command", required=True)
    run = exp_sub.add_parser("run", help="execute a plan into an output directory")
    run.add_argument("--plan", required=True, help="plan TOML file")
    run.add_argument("--out", required=True, help="output directory")
    run.set_defaults(func=_cmd_experiment_run)
    summ = exp_sub.add_parser("summarize", help="tabulate a finished run directory")
    summ.add_argument("--in", dest="in_dir", required=True, help="run directory")
    summ.add_argument("--out", required=True, help="directory for summary tables")
    summ.set_defaults(func=_cmd_experiment_summarize)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelInvalidError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except WalkTimeoutError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
