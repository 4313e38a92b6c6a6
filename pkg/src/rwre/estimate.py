"""Maximum-likelihood fitting and confidence regions.

The log-likelihood is maximized over the parameter box by L-BFGS-B with the
analytic gradient, restarted from several points because small samples can
make the surface multimodal.  Convergence is judged by our own projected
gradient computation at the terminal point, never by the optimizer's flag.
The asymptotic shape matrix is minus the normalized Hessian at the
maximizer, and confidence regions are the chi-square ellipsoids it induces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaincinv

from .env import ParamSpace
from .likelihood import loglik
from .rng import stream
from .walk import LeftStepsSequence

__all__ = [
    "OptimizerConfig",
    "StartReport",
    "MleResult",
    "ConfidenceRegion",
    "fit",
    "confidence_region",
    "chi2_quantile",
]

_DEGENERATE_EIGENVALUE = 1e-10


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the multi-start box-constrained ascent."""

    max_iters: int = 200
    grad_tol: float = 1e-4
    n_starts: int = 5
    start_seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.grad_tol <= 0.0:
            raise ValueError("grad_tol must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")


@dataclass(frozen=True)
class StartReport:
    """Terminal state of one optimizer start."""

    theta0: np.ndarray
    theta: np.ndarray
    loglik: float
    projected_grad_norm: float
    iterations: int
    message: str


@dataclass(frozen=True)
class MleResult:
    """Fitted parameter with its normalized-Hessian covariance estimate.

    ``sigma_hat`` is minus the Hessian of the log-likelihood at the
    maximizer divided by the number of increments; it estimates the
    information matrix, so the covariance of the estimator itself is
    approximately ``sigma_hat^{-1} / n``.
    """

    theta_hat: np.ndarray
    loglik_at_hat: float
    sigma_hat: Optional[np.ndarray]
    converged: bool
    at_boundary: bool
    n: int
    starts_report: List[StartReport] = field(default_factory=list)


@dataclass(frozen=True)
class ConfidenceRegion:
    """Chi-square ellipsoid ``{theta : n (c - theta)' S (c - theta) <= chi}``."""

    center: np.ndarray
    shape: np.ndarray
    n: int
    gamma: float
    chi2: float

    def statistic(self, theta) -> float:
        d = self.center - np.atleast_1d(np.asarray(theta, dtype=float))
        return float(self.n * d @ self.shape @ d)

    def contains(self, theta) -> bool:
        return self.statistic(theta) <= self.chi2

    def axes(self):
        """Semi-axis lengths and directions of the ellipsoid boundary.

        Directions whose shape eigenvalue is numerically zero are reported
        with infinite length (the region is degenerate along them) instead
        of dividing by the eigenvalue.
        """
        eigvals, eigvecs = np.linalg.eigh(self.shape)
        lengths = np.full(eigvals.size, np.inf)
        ok = eigvals > _DEGENERATE_EIGENVALUE
        lengths[ok] = np.sqrt(self.chi2 / (self.n * eigvals[ok]))
        return lengths, eigvecs


def chi2_quantile(dof: int, p: float) -> float:
    """Quantile of the chi-square law via regularized incomplete gamma inversion."""
    if dof < 1:
        raise ValueError("dof must be at least 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return float(2.0 * gammaincinv(dof / 2.0, p))


def _projected_grad_norm(
    theta: np.ndarray, grad: np.ndarray, lower: np.ndarray, upper: np.ndarray
) -> float:
    """Sup-norm of the ascent gradient projected onto the box.

    At an active lower bound only the inward (positive) component counts,
    and symmetrically at an upper bound.
    """
    pg = grad.copy()
    at_lo = theta <= lower + 1e-12
    at_hi = theta >= upper - 1e-12
    pg[at_lo] = np.maximum(pg[at_lo], 0.0)
    pg[at_hi] = np.minimum(pg[at_hi], 0.0)
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def fit(
    space: ParamSpace,
    z: Union[LeftStepsSequence, np.ndarray],
    a0_index: int = 0,
    cfg: Optional[OptimizerConfig] = None,
) -> MleResult:
    """Maximize the conditional log-likelihood over the parameter box.

    The first start is the box center and the remaining ``n_starts - 1``
    are uniform draws from the box seeded by ``start_seed``; the best
    terminal point wins.  A failed start (line-search breakdown, numerical
    error) is recorded in the report rather than raised; if every start
    fails the result carries ``converged=False`` with an empty report of
    successes.  ``sigma_hat`` is attempted at the winner and omitted (with
    the result flagged unconverged-at-interior semantics preserved) when
    the Hessian is not finite.
    """
    cfg = cfg or OptimizerConfig()
    bounds = list(zip(space.lower, space.upper))

    def objective(theta):
        ev = loglik(space, theta, z, a0_index, want_grad=True)
        return -ev.loglik, -np.asarray(ev.grad)

    starts = [space.center()]
    rng = stream(cfg.start_seed)
    for _ in range(cfg.n_starts - 1):
        starts.append(space.lower + rng.random(space.dim) * (space.upper - space.lower))

    # The optimizer aims tighter than the declared tolerance; the tolerance
    # only decides the converged flag, from our own gradient evaluation.
    options = {
        "maxiter": cfg.max_iters,
        "ftol": 1e-12,
        "gtol": min(cfg.grad_tol, 1e-7),
    }

    reports: List[StartReport] = []
    for theta0 in starts:
        try:
            res = minimize(
                objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                options=options,
            )
            theta = np.clip(res.x, space.lower, space.upper)
            neg_value, neg_grad = objective(theta)
            pg = _projected_grad_norm(theta, -neg_grad, space.lower, space.upper)
            iterations = int(res.nit)
            if pg > cfg.grad_tol and iterations < cfg.max_iters:
                # one restart with fresh quasi-Newton memory often clears a
                # last-digit stall at the relative-reduction guard
                res = minimize(
                    objective, theta, jac=True, method="L-BFGS-B", bounds=bounds,
                    options=options,
                )
                candidate = np.clip(res.x, space.lower, space.upper)
                cand_value, cand_grad = objective(candidate)
                if cand_value <= neg_value:
                    theta, neg_value, neg_grad = candidate, cand_value, cand_grad
                    pg = _projected_grad_norm(theta, -neg_grad, space.lower, space.upper)
                iterations += int(res.nit)
            reports.append(
                StartReport(
                    theta0=np.asarray(theta0, dtype=float),
                    theta=theta,
                    loglik=-float(neg_value),
                    projected_grad_norm=pg,
                    iterations=iterations,
                    message=str(res.message),
                )
            )
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            reports.append(
                StartReport(
                    theta0=np.asarray(theta0, dtype=float),
                    theta=np.asarray(theta0, dtype=float),
                    loglik=-np.inf,
                    projected_grad_norm=np.inf,
                    iterations=0,
                    message=f"start failed: {exc}",
                )
            )

    best = max(reports, key=lambda r: r.loglik)
    if not math.isfinite(best.loglik):
        return MleResult(
            theta_hat=np.asarray(starts[0], dtype=float),
            loglik_at_hat=-np.inf,
            sigma_hat=None,
            converged=False,
            at_boundary=False,
            n=_n_increments(z),
            starts_report=reports,
        )

    at_boundary = bool(
        np.any(best.theta <= space.lower + 1e-9) or np.any(best.theta >= space.upper - 1e-9)
    )
    converged = best.projected_grad_norm <= cfg.grad_tol

    sigma_hat = None
    try:
        ev = loglik(space, best.theta, z, a0_index, want_grad=False, want_hessian=True)
        n = ev.n
        if np.all(np.isfinite(ev.hessian)):
            sigma_hat = -ev.hessian / n
    except (FloatingPointError, ValueError, np.linalg.LinAlgError):
        sigma_hat = None

    return MleResult(
        theta_hat=best.theta,
        loglik_at_hat=best.loglik,
        sigma_hat=sigma_hat,
        converged=converged,
        at_boundary=at_boundary,
        n=_n_increments(z),
        starts_report=reports,
    )


def _n_increments(z: Union[LeftStepsSequence, np.ndarray]) -> int:
    if isinstance(z, LeftStepsSequence):
        return int(z.n)
    return int(np.asarray(z).size - 1)


def confidence_region(res: MleResult, gamma: float) -> ConfidenceRegion:
    """Asymptotic (1 - gamma)-level ellipsoidal region around the fit."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if res.sigma_hat is None:
        raise ValueError("fit carries no covariance estimate; region undefined")
    eigvals = np.linalg.eigvalsh(res.sigma_hat)
    if eigvals.min() < -1e-8:
        raise ValueError("covariance estimate is not positive semidefinite")
    dof = res.theta_hat.size
    return ConfidenceRegion(
        center=res.theta_hat,
        shape=res.sigma_hat,
        n=res.n,
        gamma=gamma,
        chi2=chi2_quantile(dof, 1.0 - gamma),
    )
