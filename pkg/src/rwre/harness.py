"""End-to-end Monte Carlo experiments: simulate, fit, and tabulate coverage.

A plan names a model, a true parameter, a grid of target sites, a replicate
count, and the confidence levels to score.  Each replicate simulates one
walk out to the largest target and truncates it at the successive hitting
times of the smaller targets, so the per-replicate fits share a trajectory
exactly as a single growing data set would.  Everything is keyed off one
master seed: replicates get independent streams, results are reduced in
(replicate, n) order regardless of execution order, and reruns of an equal
plan produce byte-identical CSV output.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import ConfigError, ModelConfig, load_toml, parse_model
from .env import diagnose
from .errors import ModelInvalidError, WalkTimeoutError
from .estimate import OptimizerConfig, confidence_region, fit
from .rng import child_seed
from .walk import left_steps_at, simulate_environment, simulate_walk

__all__ = [
    "ExperimentPlan",
    "FitRecord",
    "ExperimentReport",
    "load_plan",
    "run_experiment",
    "summarize",
    "write_report",
    "read_report",
]

_QUANTILE_NAMES = ("min", "q1", "median", "q3", "max")


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce one experiment."""

    name: str
    model_table: dict
    theta_star: np.ndarray
    n_grid: Tuple[int, ...]
    replicates: int
    gammas: Tuple[float, ...]
    master_seed: int
    workers: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    max_steps_factor: int = 200

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if len(self.n_grid) == 0 or any(np.diff(self.n_grid) <= 0):
            raise ValueError("n_grid must be a strictly increasing list of targets")
        if any(not 0.0 < g < 1.0 for g in self.gammas):
            raise ValueError("confidence levels gamma must lie in (0, 1)")

    def model(self) -> ModelConfig:
        return parse_model(self.model_table, source=f"plan '{self.name}'")


@dataclass(frozen=True)
class FitRecord:
    """Outcome of fitting one truncation of one replicate.

    ``error`` marks hard failures (simulation or fit exceptions, no
    estimate at all); ``region_error`` marks fits whose confidence region
    is undefined (missing or non-PSD covariance estimate) but whose point
    estimate is still real data.  Either kind is excluded from coverage
    denominators and counted as a failure.
    """

    replicate: int
    n: int
    t_n: int
    theta_hat: Optional[np.ndarray]
    loglik: float
    converged: bool
    at_boundary: bool
    sigma_hat: Optional[np.ndarray]
    contains: Dict[float, bool]
    error: str = ""
    region_error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error) or bool(self.region_error)


@dataclass(frozen=True)
class ExperimentReport:
    """All per-(replicate, n) records of a finished plan."""

    plan: ExperimentPlan
    records: List[FitRecord]

    @property
    def failure_count(self) -> int:
        return sum(1 for r in self.records if r.failed)

    def coverage(self) -> List[Tuple[int, float, float, int, int]]:
        """Rows (n, gamma, coverage, n_used, n_failed); failed fits are
        excluded from the denominator.  Coverage is checked to be
        nonincreasing in gamma at each n."""
        rows = []
        for n in self.plan.n_grid:
            here = [r for r in self.records if r.n == n]
            used = [r for r in here if not r.failed]
            failed = len(here) - len(used)
            prev = None
            for gamma in sorted(self.plan.gammas):
                hits = sum(1 for r in used if r.contains.get(gamma, False))
                cov = hits / len(used) if used else float("nan")
                if prev is not None and used and cov > prev + 1e-12:
                    raise AssertionError(
                        f"coverage increased with gamma at n={n}: {prev} -> {cov}"
                    )
                prev = cov
                rows.append((n, gamma, cov, len(used), failed))
        return rows


# ---------------------------------------------------------------------------
# Plan files
# ---------------------------------------------------------------------------


def load_plan(path: str) -> ExperimentPlan:
    """Parse an experiment plan from TOML.

    Schema::

        [experiment]
        name = "two-state-coverage"
        replicates = 100
        n_grid = [1000, 2000]
        gammas = [0.01, 0.05, 0.1]
        master_seed = 1234
        workers = 1            # optional
        max_steps_factor = 200 # optional

        [experiment.truth]
        theta = [0.2, 0.9]

        [model]        # same schema as a model config file
        ...

        [optimizer]    # optional; defaults documented in estimate
        max_iters = 200
        grad_tol = 1e-5
        n_starts = 5
        start_seed = 0
    """
    data = load_toml(path)
    for table in ("experiment", "model"):
        if table not in data:
            raise ConfigError(f"{path}: missing [{table}] table")
    exp = data["experiment"]

    def need(key):
        if key not in exp:
            raise ConfigError(f"{path}: experiment: missing required key '{key}'")
        return exp[key]

    truth = need("truth")
    if "theta" not in truth:
        raise ConfigError(f"{path}: experiment.truth: missing required key 'theta'")
    opt_table = data.get("optimizer", {})
    try:
        optimizer = OptimizerConfig(
            max_iters=int(opt_table.get("max_iters", 200)),
            grad_tol=float(opt_table.get("grad_tol", 1e-4)),
            n_starts=int(opt_table.get("n_starts", 5)),
            start_seed=int(opt_table.get("start_seed", 0)),
        )
        plan = ExperimentPlan(
            name=str(exp.get("name", "experiment")),
            model_table=data["model"],
            theta_star=np.asarray(truth["theta"], dtype=float),
            n_grid=tuple(need("n_grid")),
            replicates=int(need("replicates")),
            gammas=tuple(need("gammas")),
            master_seed=int(need("master_seed")),
            workers=int(exp.get("workers", 1)),
            optimizer=optimizer,
            max_steps_factor=int(exp.get("max_steps_factor", 200)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    model = plan.model()
    if not model.space.contains(plan.theta_star):
        raise ConfigError(f"{path}: experiment.truth.theta lies outside the model box")
    return plan


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _run_replicate(plan: ExperimentPlan, rep: int) -> List[FitRecord]:
    model = plan.model()
    space = model.space
    kernel = space.kernel(plan.theta_star)
    n_max = plan.n_grid[-1]
    records: List[FitRecord] = []

    env_seed = child_seed(plan.master_seed, rep, 0)
    walk_seed = child_seed(plan.master_seed, rep, 1)
    try:
        path = simulate_environment(kernel, (0, n_max), env_seed)
        traj = simulate_walk(
            path, kernel, n_max, walk_seed, max_steps=plan.max_steps_factor * n_max
        )
    except (WalkTimeoutError, ModelInvalidError) as exc:
        reason = f"simulation failed: {exc}"
        return [
            FitRecord(
                replicate=rep, n=n, t_n=-1, theta_hat=None, loglik=float("nan"),
                converged=False, at_boundary=False, sigma_hat=None, contains={},
                error=reason,
            )
            for n in plan.n_grid
        ]

    for n in plan.n_grid:
        t_n = int(np.argmax(traj.steps == n))
        try:
            z = left_steps_at(traj, n)
            result = fit(space, z, model.a0_index, plan.optimizer)
        except Exception as exc:  # per-replicate failures are recorded, not fatal
            records.append(
                FitRecord(
                    replicate=rep, n=n, t_n=t_n, theta_hat=None, loglik=float("nan"),
                    converged=False, at_boundary=False, sigma_hat=None, contains={},
                    error=f"fit failed: {exc}",
                )
            )
            continue
        contains: Dict[float, bool] = {}
        region_error = ""
        try:
            for gamma in plan.gammas:
                region = confidence_region(result, gamma)
                contains[gamma] = bool(region.contains(plan.theta_star))
        except ValueError as exc:
            contains = {}
            region_error = f"region undefined: {exc}"
        records.append(
            FitRecord(
                replicate=rep,
                n=n,
                t_n=t_n,
                theta_hat=result.theta_hat,
                loglik=result.loglik_at_hat,
                converged=result.converged,
                at_boundary=result.at_boundary,
                sigma_hat=result.sigma_hat,
                contains=contains,
                error="",
                region_error=region_error,
            )
        )
    return records


def run_experiment(plan: ExperimentPlan) -> ExperimentReport:
    """Execute a plan; deterministic for a given master seed.

    Replicates run independently (in processes when ``plan.workers > 1``)
    and the report is assembled in (replicate, n) order whatever the
    completion order.
    """
    model = plan.model()
    if not diagnose(model.space.kernel(plan.theta_star)).ballistic:
        raise ModelInvalidError("plan's true parameter is not ballistic")

    reps = range(plan.replicates)
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            chunks = list(pool.map(_run_replicate, [plan] * plan.replicates, reps))
    else:
        chunks = [_run_replicate(plan, rep) for rep in reps]
    records = [record for chunk in chunks for record in chunk]
    records.sort(key=lambda r: (r.replicate, r.n))
    return ExperimentReport(plan=plan, records=records)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return repr(float(value))


def _sanitize(message: str) -> str:
    """Keep failure messages single-cell safe."""
    return message.replace(",", ";").replace("\n", " ")


def _sigma_columns(dim: int) -> List[Tuple[str, int, int]]:
    return [(f"sigma_{i}_{j}", i, j) for i in range(dim) for j in range(i, dim)]


def _record_header(plan: ExperimentPlan) -> List[str]:
    dim = plan.theta_star.size
    header = ["replicate", "n", "t_n", "converged", "at_boundary", "loglik"]
    header += [f"theta_hat_{i}" for i in range(dim)]
    header += [name for name, _, _ in _sigma_columns(dim)]
    header += [f"contains_{_gamma_tag(g)}" for g in plan.gammas]
    header += ["region_error", "error"]
    return header


def _gamma_tag(gamma: float) -> str:
    return repr(float(gamma))


def records_csv(report: ExperimentReport) -> str:
    """Tidy per-record table, one row per (replicate, n)."""
    plan = report.plan
    dim = plan.theta_star.size
    lines = [",".join(_record_header(plan))]
    for r in report.records:
        row = [
            _fmt(r.replicate), _fmt(r.n), _fmt(r.t_n), _fmt(r.converged),
            _fmt(r.at_boundary), _fmt(r.loglik),
        ]
        row += [_fmt(r.theta_hat[i]) if r.theta_hat is not None else "" for i in range(dim)]
        for _, i, j in _sigma_columns(dim):
            row.append(_fmt(r.sigma_hat[i, j]) if r.sigma_hat is not None else "")
        for gamma in plan.gammas:
            row.append(_fmt(r.contains[gamma]) if gamma in r.contains else "")
        row.append(_sanitize(r.region_error))
        row.append(_sanitize(r.error))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def coverage_csv(report: ExperimentReport) -> str:
    lines = ["n,gamma,coverage,n_used,n_failed"]
    for n, gamma, cov, used, failed in report.coverage():
        lines.append(
            f"{n},{_gamma_tag(gamma)},{_fmt(cov)},{used},{failed}"
        )
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, out_dir, wall_clock: float) -> None:
    """Write records.csv, coverage.csv, and manifest.json into a directory.

    The CSVs are byte-identical across reruns of an equal plan; the
    manifest is too except for its wall_clock_seconds field.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "records.csv"), "w") as handle:
        handle.write(records_csv(report))
    with open(os.path.join(out_dir, "coverage.csv"), "w") as handle:
        handle.write(coverage_csv(report))
    plan = report.plan
    manifest = {
        "name": plan.name,
        "version": f"rwre-{__version__}",
        "plan": {
            "model": plan.model_table,
            "theta_star": plan.theta_star.tolist(),
            "n_grid": list(plan.n_grid),
            "replicates": plan.replicates,
            "gammas": list(plan.gammas),
            "master_seed": plan.master_seed,
            "workers": plan.workers,
            "max_steps_factor": plan.max_steps_factor,
            "optimizer": {
                "max_iters": plan.optimizer.max_iters,
                "grad_tol": plan.optimizer.grad_tol,
                "n_starts": plan.optimizer.n_starts,
                "start_seed": plan.optimizer.start_seed,
            },
        },
        "failure_count": report.failure_count,
        "record_count": len(report.records),
        "wall_clock_seconds": wall_clock,
        "outputs": ["records.csv", "coverage.csv"],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_report(in_dir) -> ExperimentReport:
    """Reconstruct a report from a run directory written by write_report."""
    import os

    with open(os.path.join(in_dir, "manifest.json")) as handle:
        manifest = json.load(handle)
    plan_data = manifest["plan"]
    plan = ExperimentPlan(
        name=manifest["name"],
        model_table=plan_data["model"],
        theta_star=np.asarray(plan_data["theta_star"], dtype=float),
        n_grid=tuple(plan_data["n_grid"]),
        replicates=int(plan_data["replicates"]),
        gammas=tuple(plan_data["gammas"]),
        master_seed=int(plan_data["master_seed"]),
        workers=int(plan_data["workers"]),
        optimizer=OptimizerConfig(**plan_data["optimizer"]),
        max_steps_factor=int(plan_data["max_steps_factor"]),
    )
    dim = plan.theta_star.size
    records = []
    with open(os.path.join(in_dir, "records.csv")) as handle:
        header = handle.readline().rstrip("\n").split(",")
        index = {name: k for k, name in enumerate(header)}
        for line in handle:
            cells = line.rstrip("\n").split(",")
            theta = [cells[index[f"theta_hat_{i}"]] for i in range(dim)]
            theta_hat = np.array([float(c) for c in theta]) if all(theta) else None
            sigma = None
            sigma_cells = [cells[index[name]] for name, _, _ in _sigma_columns(dim)]
            if all(sigma_cells):
                sigma = np.empty((dim, dim))
                for (_, i, j), cell in zip(_sigma_columns(dim), sigma_cells):
                    sigma[i, j] = sigma[j, i] = float(cell)
            contains = {}
            for gamma in plan.gammas:
                cell = cells[index[f"contains_{_gamma_tag(gamma)}"]]
                if cell:
                    contains[gamma] = cell == "1"
            records.append(
                FitRecord(
                    replicate=int(cells[index["replicate"]]),
                    n=int(cells[index["n"]]),
                    t_n=int(cells[index["t_n"]]),
                    theta_hat=theta_hat,
                    loglik=float(cells[index["loglik"]]) if cells[index["loglik"]] else float("nan"),
                    converged=cells[index["converged"]] == "1",
                    at_boundary=cells[index["at_boundary"]] == "1",
                    sigma_hat=sigma,
                    contains=contains,
                    error=cells[index["error"]],
                    region_error=cells[index["region_error"]],
                )
            )
    return ExperimentReport(plan=plan, records=records)


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def _quantiles(values: np.ndarray) -> List[float]:
    return [
        float(np.min(values)),
        float(np.quantile(values, 0.25)),
        float(np.quantile(values, 0.5)),
        float(np.quantile(values, 0.75)),
        float(np.max(values)),
    ]


def summarize(report: ExperimentReport):
    """Per-n quantile tables plus the coverage matrix and shape comparison.

    Returns a dict of CSV strings: ``summary.csv`` holds min/q1/median/q3/max
    of every fitted coordinate and covariance entry per n; ``coverage.csv``
    is the n-by-gamma coverage matrix; ``shape_compare.csv`` sets the mean
    Hessian-implied covariance of the estimator against the empirical
    covariance across replicates.
    """
    if not report.records:
        raise ValueError("report holds no records")
    plan = report.plan
    dim = plan.theta_star.size
    quantities = [f"theta_hat_{i}" for i in range(dim)]
    quantities += [name for name, _, _ in _sigma_columns(dim)]

    summary = ["n,quantity," + ",".join(_QUANTILE_NAMES)]
    for n in plan.n_grid:
        here = [r for r in report.records if r.n == n]
        with_theta = [r for r in here if r.theta_hat is not None]
        if with_theta:
            theta = np.array([r.theta_hat for r in with_theta])
            for i in range(dim):
                summary.append(
                    f"{n},theta_hat_{i}," + ",".join(_fmt(v) for v in _quantiles(theta[:, i]))
                )
        with_sigma = [r for r in here if r.sigma_hat is not None]
        for name, i, j in _sigma_columns(dim):
            if not with_sigma:
                break
            vals = np.array([r.sigma_hat[i, j] for r in with_sigma])
            summary.append(f"{n},{name}," + ",".join(_fmt(v) for v in _quantiles(vals)))

    gammas = sorted(plan.gammas)
    matrix = [",".join(["n"] + [_gamma_tag(g) for g in gammas])]
    cov_rows = {(n, g): cov for n, g, cov, _, _ in report.coverage()}
    for n in plan.n_grid:
        matrix.append(",".join([str(n)] + [_fmt(cov_rows[(n, g)]) for g in gammas]))

    compare = ["n,entry,mean_hessian_implied,empirical_cov,n_used"]
    for n in plan.n_grid:
        rows = _shape_comparison(report, n)
        for entry, implied, empirical, used in rows:
            compare.append(f"{n},{entry},{_fmt(implied)},{_fmt(empirical)},{used}")

    return {
        "summary.csv": "\n".join(summary) + "\n",
        "coverage.csv": "\n".join(matrix) + "\n",
        "shape_compare.csv": "\n".join(compare) + "\n",
    }


def _shape_comparison(report: ExperimentReport, n: int):
    """Mean of sigma_hat^{-1}/n (the implied covariance of the estimator)
    against the empirical covariance of theta_hat across replicates."""
    dim = report.plan.theta_star.size
    used = [
        r
        for r in report.records
        if r.n == n and r.sigma_hat is not None and r.converged
        and np.linalg.eigvalsh(r.sigma_hat).min() > 1e-10
    ]
    if len(used) < 2:
        return []
    implied = np.mean([np.linalg.inv(r.sigma_hat) / r.n for r in used], axis=0)
    theta = np.array([r.theta_hat for r in used])
    centered = theta - theta.mean(axis=0)
    empirical = centered.T @ centered / len(used)
    rows = []
    for name, i, j in _sigma_columns(dim):
        rows.append((name.replace("sigma", "cov"), implied[i, j], empirical[i, j], len(used)))
    return rows
