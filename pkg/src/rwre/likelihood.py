"""Exact conditional log-likelihood of a left-steps sequence.

The left-steps process is the observed half of a Markov-switching
autoregression: a hidden environment chain runs with the reversed kernel
while each observed count is emitted from a negative-binomial law indexed
by the hidden state.  Because the hidden state space is finite, the
likelihood is computed exactly by a normalized forward recursion (the
prediction filter), and its parameter gradient by differentiating that
recursion step by step.  Hessians come from central differences of the
analytic gradient.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .env import EnvKernel, ParamSpace
from .errors import FilterDegeneracyError
from .walk import LeftStepsSequence

__all__ = [
    "EmissionTable",
    "PredictionFilter",
    "LikelihoodEvaluation",
    "log_emission",
    "filter_init",
    "filter_step",
    "loglik",
]

_HESSIAN_STEP_FLOOR = 1e-5
_HESSIAN_STEP_REL = 1e-4


class _LogFactorialCache:
    """log k! table grown on demand by doubling.

    Values use the additive recurrence log k! = log (k-1)! + log k, so small
    arguments are exact rather than Stirling-approximate.
    """

    def __init__(self):
        self._values = np.zeros(1)
        self._lock = threading.Lock()

    def table(self, n: int) -> np.ndarray:
        values = self._values
        if n >= values.size:
            with self._lock:
                values = self._values
                if n >= values.size:
                    size = max(n + 1, 2 * values.size)
                    ext = np.log(np.arange(values.size, size, dtype=float))
                    values = np.concatenate([values, values[-1] + np.cumsum(ext)])
                    self._values = values
        return values


_LOG_FACTORIALS = _LogFactorialCache()


def _log_binom(total: Union[int, np.ndarray], k: Union[int, np.ndarray]) -> np.ndarray:
    table = _LOG_FACTORIALS.table(int(np.max(total)))
    return table[total] - table[k] - table[np.asarray(total) - k]


def log_emission(a: float, x: int, y: int) -> float:
    """log of the chance that a generation of size x is followed by size y.

    The law is negative binomial: ``C(x+y, x) a^(x+1) (1-a)^y`` for a
    hidden state ``a``.
    """
    if not 0.0 < a < 1.0:
        raise ValueError("state value must lie in (0, 1)")
    if x < 0 or y < 0:
        raise ValueError("counts must be nonnegative")
    return float(_log_binom(x + y, x)) + (x + 1) * math.log(a) + y * math.log1p(-a)


@dataclass(frozen=True)
class EmissionTable:
    """Vectorized emission log-probabilities over a fixed support."""

    support_values: np.ndarray

    def log_row(self, x: int, y: int) -> np.ndarray:
        """log g_a(x, y) for every support state a."""
        a = self.support_values
        return float(_log_binom(x + y, x)) + (x + 1) * np.log(a) + y * np.log1p(-a)

    def log_matrix(self, z: np.ndarray) -> np.ndarray:
        """(n, m) matrix of log g_a(z[k-1], z[k]) across increments k."""
        z = np.asarray(z, dtype=np.int64)
        x, y = z[:-1], z[1:]
        a = self.support_values
        binom = _log_binom(x + y, x)
        return (
            binom[:, np.newaxis]
            + (x + 1)[:, np.newaxis] * np.log(a)[np.newaxis, :]
            + y[:, np.newaxis] * np.log1p(-a)[np.newaxis, :]
        )


@dataclass(frozen=True)
class PredictionFilter:
    """Conditional law of the hidden state given the observations so far,
    together with its parameter gradient."""

    probs: np.ndarray
    grad: np.ndarray
    step: int
    anchor: int

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float, copy=True)
        grad = np.array(self.grad, dtype=float, copy=True)
        probs.setflags(write=False)
        grad.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "grad", grad)
        if abs(probs.sum() - 1.0) > 1e-12 or np.any(probs < -1e-15):
            raise ValueError("filter must be a probability vector")
        if grad.ndim != 2 or grad.shape[1] != probs.size:
            raise ValueError("gradient must be (n_params, n_states)")


@dataclass(frozen=True)
class LikelihoodEvaluation:
    """Log-likelihood with optional derivatives at one parameter point."""

    loglik: float
    grad: Optional[np.ndarray]
    hessian: Optional[np.ndarray]
    n: int


def filter_init(kernel: EnvKernel, a0_index: int, n_params: int = 0) -> PredictionFilter:
    """Filter at step 0: point mass at the conditioning state, zero gradient."""
    if not 0 <= a0_index < kernel.size:
        raise ValueError(f"a0_index must index the {kernel.size}-state support")
    probs = np.zeros(kernel.size)
    probs[a0_index] = 1.0
    return PredictionFilter(
        probs=probs, grad=np.zeros((n_params, kernel.size)), step=0, anchor=a0_index
    )


def _step_arrays(
    probs: np.ndarray,
    grad: np.ndarray,
    q_rev: np.ndarray,
    dq_flat: Optional[np.ndarray],
    g: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    """One filter update against pre-shifted emission weights ``g``.

    Returns (new_probs, new_grad, log c, dc/c) where c is the normalizing
    constant in the shifted scale.
    """
    u = (probs @ q_rev) * g
    c = float(u.sum())
    if c <= 0.0 or not math.isfinite(c):
        raise FilterDegeneracyError("filter update produced a non-positive normalizer")
    new_probs = u / c
    if dq_flat is None:
        return new_probs, grad, math.log(c), np.zeros(grad.shape[0])
    n_params, m = grad.shape
    du = (grad @ q_rev + (probs @ dq_flat).reshape(n_params, m)) * g[np.newaxis, :]
    grad_inc = du.sum(axis=1) / c
    new_grad = (du - grad_inc[:, np.newaxis] * u[np.newaxis, :]) / c
    return new_probs, new_grad, math.log(c), grad_inc


def filter_step(
    filt: PredictionFilter,
    kernel: EnvKernel,
    dq_rev: Optional[np.ndarray],
    z_prev: int,
    z_next: int,
) -> Tuple[PredictionFilter, float, np.ndarray]:
    """Advance the filter by one observed increment.

    The unnormalized update is ``u(b') = sum_b F(b) q_rev(b, b') g_{b'}``;
    the log of its total is the conditional log-probability of the new
    observation, and the gradient increment is the derivative of that log.
    Emission weights are max-shifted in log space so large counts cannot
    underflow the update.
    """
    log_g = EmissionTable(kernel.support.values).log_row(z_prev, z_next)
    shift = float(log_g.max())
    dq_flat = None
    if dq_rev is not None:
        dq_rev = np.asarray(dq_rev, dtype=float)
        if dq_rev.shape != (filt.grad.shape[0], kernel.size, kernel.size):
            raise ValueError("dq_rev must be (n_params, m, m) matching the filter gradient")
        dq_flat = np.transpose(dq_rev, (1, 0, 2)).reshape(kernel.size, -1)
    probs, grad, log_c, grad_inc = _step_arrays(
        filt.probs, filt.grad, kernel.q_rev, dq_flat, np.exp(log_g - shift)
    )
    new_filt = PredictionFilter(
        probs=probs, grad=grad, step=filt.step + 1, anchor=filt.anchor
    )
    return new_filt, log_c + shift, grad_inc


def _forward_pass_2x2(
    q_rev: np.ndarray,
    dq_rev: np.ndarray,
    g_all: np.ndarray,
    shifts: np.ndarray,
    a0_index: int,
) -> Tuple[float, np.ndarray]:
    """Scalar-unrolled forward pass for two states and two parameters.

    Identical recursion to the generic path, written in plain floats: the
    per-step arrays are so small that interpreter-level arithmetic beats
    vectorized calls by an order of magnitude, and this shape is exactly
    the main synthetic-experiment model.
    """
    q00, q01 = q_rev[0]
    q10, q11 = q_rev[1]
    a00, a01 = dq_rev[0, 0]
    a10, a11 = dq_rev[0, 1]
    b00, b01 = dq_rev[1, 0]
    b10, b11 = dq_rev[1, 1]
    f0, f1 = (1.0, 0.0) if a0_index == 0 else (0.0, 1.0)
    da0 = da1 = db0 = db1 = 0.0
    total = float(shifts.sum())
    grad_a = grad_b = 0.0
    log = math.log
    rows = g_all.tolist()
    for k, (g0, g1) in enumerate(rows):
        u0 = (f0 * q00 + f1 * q10) * g0
        u1 = (f0 * q01 + f1 * q11) * g1
        c = u0 + u1
        if c <= 0.0:
            raise FilterDegeneracyError(
                f"filter update produced a non-positive normalizer at increment {k + 1}"
            )
        inv = 1.0 / c
        total += log(c)

        t0 = (da0 * q00 + da1 * q10 + f0 * a00 + f1 * a10) * g0
        t1 = (da0 * q01 + da1 * q11 + f0 * a01 + f1 * a11) * g1
        ra = (t0 + t1) * inv
        grad_a += ra
        s0 = (db0 * q00 + db1 * q10 + f0 * b00 + f1 * b10) * g0
        s1 = (db0 * q01 + db1 * q11 + f0 * b01 + f1 * b11) * g1
        rb = (s0 + s1) * inv
        grad_b += rb

        f0 = u0 * inv
        f1 = u1 * inv
        da0 = (t0 - ra * u0) * inv
        da1 = (t1 - ra * u1) * inv
        db0 = (s0 - rb * u0) * inv
        db1 = (s1 - rb * u1) * inv
    if not math.isfinite(total) or not (math.isfinite(grad_a) and math.isfinite(grad_b)):
        raise FloatingPointError("likelihood accumulation left the finite range")
    return total, np.array([grad_a, grad_b])


def _forward_pass(
    support_values: np.ndarray,
    q_rev: np.ndarray,
    z: np.ndarray,
    a0_index: int,
    dq_rev: Optional[np.ndarray],
) -> Tuple[float, Optional[np.ndarray]]:
    """Sum the log and gradient increments over a whole observation vector."""
    m = support_values.size
    log_g = EmissionTable(support_values).log_matrix(z)
    shifts = log_g.max(axis=1)
    g_all = np.exp(log_g - shifts[:, np.newaxis])

    if m == 2 and dq_rev is not None and dq_rev.shape[0] == 2:
        return _forward_pass_2x2(q_rev, np.asarray(dq_rev, dtype=float), g_all, shifts, a0_index)

    probs = np.zeros(m)
    probs[a0_index] = 1.0
    if dq_rev is None:
        grad = np.zeros((0, m))
        dq_flat = None
    else:
        grad = np.zeros((dq_rev.shape[0], m))
        dq_flat = np.transpose(dq_rev, (1, 0, 2)).reshape(m, -1)

    total = 0.0
    grad_total = np.zeros(grad.shape[0])
    for k in range(z.size - 1):
        try:
            probs, grad, log_c, grad_inc = _step_arrays(
                probs, grad, q_rev, dq_flat, g_all[k]
            )
        except FilterDegeneracyError as exc:
            raise FilterDegeneracyError(f"{exc} at increment {k + 1}") from exc
        total += log_c + shifts[k]
        grad_total += grad_inc
    if not math.isfinite(total) or not np.all(np.isfinite(grad_total)):
        raise FloatingPointError("likelihood accumulation left the finite range")
    return total, (grad_total if dq_rev is not None else None)


def _as_z_array(z: Union[LeftStepsSequence, np.ndarray]) -> np.ndarray:
    if isinstance(z, LeftStepsSequence):
        return z.z
    z = np.asarray(z, dtype=np.int64)
    if z.ndim != 1 or z.size < 2 or z[0] != 0 or np.any(z < 0):
        raise ValueError("observations must be a nonnegative vector starting at 0")
    return z


def loglik(
    space: ParamSpace,
    theta,
    z: Union[LeftStepsSequence, np.ndarray],
    a0_index: int = 0,
    want_grad: bool = True,
    want_hessian: bool = False,
) -> LikelihoodEvaluation:
    """Conditional log-likelihood (and derivatives) at a parameter point.

    The value is the sum over increments of the log conditional probability
    of each count given its predecessors, conditioned on the hidden chain
    starting at support state ``a0_index``.  The Hessian, when requested,
    is a symmetrized central difference of the analytic gradient with per
    coordinate steps ``max(1e-5, 1e-4 |theta_i|)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not space.contains(theta):
        raise ValueError(f"theta {theta.tolist()} lies outside the parameter box")
    z_arr = _as_z_array(z)
    need_grad = want_grad or want_hessian

    if need_grad:
        kernel, dq_rev = space.kernel_with_grad(theta)
    else:
        kernel, dq_rev = space.kernel(theta), None
    if not 0 <= a0_index < kernel.size:
        raise ValueError(f"a0_index must index the {kernel.size}-state support")
    value, grad = _forward_pass(
        kernel.support.values, kernel.q_rev, z_arr, a0_index, dq_rev
    )
    if value > 1e-9:
        raise FloatingPointError("log-likelihood of discrete observations must be <= 0")

    hessian = None
    if want_hessian:
        hessian = _hessian_by_grad_differences(space, theta, z_arr, a0_index)
    return LikelihoodEvaluation(
        loglik=value,
        grad=grad if want_grad else None,
        hessian=hessian,
        n=int(z_arr.size - 1),
    )


def _hessian_by_grad_differences(
    space: ParamSpace, theta: np.ndarray, z: np.ndarray, a0_index: int
) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrized.

    The probe points may step slightly outside the declared box; only
    kernel validity is required there.
    """
    dim = space.dim
    hessian = np.empty((dim, dim))
    for i in range(dim):
        h = max(_HESSIAN_STEP_FLOOR, _HESSIAN_STEP_REL * abs(theta[i]))
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            probe = theta.copy()
            probe[i] += sign * h
            kernel, dq_rev = space.kernel_with_grad(probe)
            _, grad = _forward_pass(
                kernel.support.values, kernel.q_rev, z, a0_index, dq_rev
            )
            if slot == 0:
                upper = grad
            else:
                hessian[:, i] = (upper - grad) / (2.0 * h)
    return 0.5 * (hessian + hessian.T)
