"""Finite-state Markov environment models for nearest-neighbor random walks.

An environment assigns to every integer site a right-step probability drawn
from a finite support ``S = {a_1 < ... < a_m} ⊂ (0, 1)``; the sequence of
site states is a stationary Markov chain with row-stochastic kernel ``q``.
This module builds such kernels (generic parameterized families plus the
standard presets), derives their stationary and time-reversed kernels, and
runs the structural checks a walk model must satisfy before simulation or
inference makes sense: uniform ellipticity, transience to the right, and
ballisticity (strictly positive asymptotic speed).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ModelInvalidError

__all__ = [
    "Support",
    "EnvKernel",
    "ParamSpace",
    "ModelDiagnostics",
    "stationary_distribution",
    "reversed_kernel",
    "diagnose",
    "preset_iid_two_values",
    "preset_two_state_chain",
    "preset_dna_unzipping",
    "free_entries_space",
    "DNA_BASES",
    "DNA_BINDING_ENERGY",
]

DEFAULT_EPSILON = 0.05

# Row-stochasticity and derived-kernel tolerances.
_ROW_SUM_TOL = 1e-12
_STATIONARY_TOL = 1e-10

_FD_STEP = 1e-7


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Support:
    """Ordered finite support of right-step probabilities.

    ``epsilon`` is the declared uniform-ellipticity margin: every value must
    lie in ``[epsilon, 1 - epsilon]``.
    """

    values: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        values = _frozen(np.atleast_1d(self.values))
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("support must be a nonempty 1-d array of state values")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 1/2), got {self.epsilon}")
        if np.any(np.diff(values) <= 0):
            raise ValueError("support values must be strictly increasing")
        if values[0] < self.epsilon or values[-1] > 1.0 - self.epsilon:
            raise ModelInvalidError(
                "support {} breaks uniform ellipticity for epsilon={}".format(
                    values.tolist(), self.epsilon
                )
            )

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def tilde(self) -> np.ndarray:
        """Left/right odds ``(1 - a) / a`` per state."""
        return (1.0 - self.values) / self.values

    def index_of(self, value: float) -> int:
        """Index of a state value, matched within 1e-12."""
        hits = np.nonzero(np.abs(self.values - value) < 1e-12)[0]
        if hits.size != 1:
            raise ValueError(f"{value} is not a support state")
        return int(hits[0])


@dataclass(frozen=True)
class EnvKernel:
    """Environment transition kernel with its stationary law and reversal.

    ``q[i, j]`` is the probability that the state at the next site to the
    right is ``a_j`` given ``a_i`` at the current site.  ``q_rev`` is the
    time-reversed kernel ``q_rev[i, j] = mu[j] * q[j, i] / mu[i]``, which
    drives the environment read from right to left.
    """

    support: Support
    q: np.ndarray
    mu: np.ndarray
    q_rev: np.ndarray

    def __post_init__(self):
        for name in ("q", "mu", "q_rev"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        m = self.support.size
        if self.q.shape != (m, m):
            raise ValueError(f"kernel must be {m}x{m}, got {self.q.shape}")
        _check_row_stochastic(self.q)
        _check_row_stochastic(self.q_rev)
        if np.max(np.abs(self.mu @ self.q - self.mu)) > _STATIONARY_TOL:
            raise ModelInvalidError("mu is not stationary for q")
        expected_rev = _reverse(self.q, self.mu)
        if np.max(np.abs(self.q_rev - expected_rev)) > 1e-10:
            raise ModelInvalidError("q_rev violates the time-reversal identity")

    @classmethod
    def from_q(cls, support: Support, q: np.ndarray) -> "EnvKernel":
        """Build a kernel from its transition matrix alone."""
        q = np.asarray(q, dtype=float)
        mu = stationary_distribution(q)
        return cls(support=support, q=q, mu=mu, q_rev=_reverse(q, mu))

    @property
    def size(self) -> int:
        return self.support.size

    def entry_bounds(self) -> Tuple[float, float]:
        """(min, max) over kernel entries; min over nonzero entries only
        when the kernel has structural zeros."""
        positive = self.q[self.q > 0.0]
        return float(positive.min()), float(self.q.max())

    def assert_uniformly_positive(self, sigma_minus: float) -> None:
        """Require every entry of q to be at least ``sigma_minus`` > 0."""
        if sigma_minus <= 0.0:
            raise ValueError("sigma_minus must be positive")
        if float(self.q.min()) < sigma_minus:
            raise ModelInvalidError(
                f"kernel entries fall below the declared lower bound {sigma_minus}"
            )


@dataclass(frozen=True)
class ModelDiagnostics:
    """Transience/ballisticity summary of an environment model.

    ``e_log_tilde`` and ``e_tilde`` are the stationary expectations of
    ``log((1-a)/a)`` and ``(1-a)/a``.  The walk drifts to the right iff
    ``e_log_tilde < 0``; it has strictly positive speed iff ``e_tilde < 1``
    in the i.i.d. case and iff it is transient otherwise (unique ergodicity
    upgrades transience to ballisticity).
    """

    e_log_tilde: float
    e_tilde: float
    iid: bool
    transient_right: bool
    ballistic: bool


@dataclass(frozen=True)
class ParamSpace:
    """Box-constrained parameterized family of environment kernels.

    ``q_of_theta`` maps a parameter vector to ``(q, dq)`` where ``dq`` has
    shape ``(dim, m, m)`` holding the entrywise derivatives of ``q``, or is
    None when no analytic derivative is available (a finite-difference
    fallback then kicks in for gradient work, with a warning).
    """

    support: Support
    lower: np.ndarray
    upper: np.ndarray
    q_of_theta: Callable[[np.ndarray], Tuple[np.ndarray, Optional[np.ndarray]]]
    name: str = "custom"
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        lower = _frozen(np.atleast_1d(self.lower))
        upper = _frozen(np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower/upper bounds must be 1-d arrays of equal length")
        if np.any(lower >= upper):
            raise ValueError("box bounds must satisfy lower < upper coordinatewise")

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return theta.shape == self.lower.shape and bool(
            np.all(theta >= self.lower - 1e-12) and np.all(theta <= self.upper + 1e-12)
        )

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def _theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != self.lower.shape:
            raise ValueError(f"theta must have shape {self.lower.shape}, got {theta.shape}")
        return theta

    def kernel(self, theta) -> EnvKernel:
        """Environment kernel at a parameter point."""
        q, _ = self.q_of_theta(self._theta(theta))
        return EnvKernel.from_q(self.support, q)

    def kernel_with_grad(self, theta) -> Tuple[EnvKernel, np.ndarray]:
        """Kernel plus the derivative of the reversed kernel.

        Returns ``(kernel, dq_rev)`` with ``dq_rev`` of shape
        ``(dim, m, m)``.
        """
        theta = self._theta(theta)
        q, dq = self.q_of_theta(theta)
        kernel = EnvKernel.from_q(self.support, q)
        if dq is None:
            return kernel, self._fd_dq_rev(theta, kernel)
        dq = np.asarray(dq, dtype=float)
        dmu = _stationary_grad(q, kernel.mu, dq)
        dq_rev = _reverse_grad(q, kernel.mu, kernel.q_rev, dq, dmu)
        return kernel, dq_rev

    def _fd_dq_rev(self, theta: np.ndarray, kernel: EnvKernel) -> np.ndarray:
        warnings.warn(
            "no analytic kernel derivative supplied; using forward differences "
            "on the reversed kernel (step {})".format(_FD_STEP),
            RuntimeWarning,
            stacklevel=3,
        )
        dq_rev = np.empty((self.dim, kernel.size, kernel.size))
        for i in range(self.dim):
            bumped = theta.copy()
            bumped[i] += _FD_STEP
            dq_rev[i] = (self.kernel(bumped).q_rev - kernel.q_rev) / _FD_STEP
        return dq_rev


# ---------------------------------------------------------------------------
# Kernel operations
# ---------------------------------------------------------------------------


def _check_row_stochastic(q: np.ndarray) -> None:
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {q.shape}")
    if np.any(q < 0.0) or np.any(q > 1.0):
        raise ValueError("transition probabilities must lie in [0, 1]")
    bad = np.abs(q.sum(axis=1) - 1.0) > _ROW_SUM_TOL
    if np.any(bad):
        raise ValueError(f"rows {np.nonzero(bad)[0].tolist()} do not sum to 1")


def _graph_period(adj: np.ndarray) -> int:
    """Period of a strongly connected directed graph (gcd of cycle lengths)."""
    n = adj.shape[0]
    level = np.full(n, -1, dtype=int)
    level[0] = 0
    queue = [0]
    g = 0
    while queue:
        u = queue.pop()
        for v in np.nonzero(adj[u])[0]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(int(v))
            else:
                g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g) if g != 0 else 0


def stationary_distribution(q: np.ndarray) -> np.ndarray:
    """Unique stationary probability vector of an ergodic finite kernel.

    Solves the augmented linear system ``mu (q - I) = 0``, ``sum(mu) = 1``
    directly; reducible or periodic kernels are rejected rather than
    silently picking one of several invariant measures.
    """
    q = np.asarray(q, dtype=float)
    _check_row_stochastic(q)
    adj = q > 0.0
    n_comp, _ = connected_components(csr_matrix(adj), directed=True, connection="strong")
    if n_comp != 1:
        raise ModelInvalidError("kernel is reducible; stationary law is not unique")
    if _graph_period(adj) != 1:
        raise ModelInvalidError("kernel is periodic; chain does not mix")

    m = q.shape[0]
    a = np.vstack([q.T - np.eye(m), np.ones((1, m))])
    b = np.zeros(m + 1)
    b[-1] = 1.0
    mu = np.linalg.lstsq(a, b, rcond=None)[0]
    # One multiplication by q contracts any residual left over from lstsq.
    for _ in range(5):
        if np.max(np.abs(mu @ q - mu)) <= 1e-13:
            break
        mu = mu @ q
        mu /= mu.sum()
    if np.max(np.abs(mu @ q - mu)) > 1e-12 or np.any(mu <= 0.0):
        raise ModelInvalidError("failed to produce a positive stationary vector")
    return mu


def _reverse(q: np.ndarray, mu: np.ndarray) -> np.ndarray:
    return q.T * mu[np.newaxis, :] / mu[:, np.newaxis]


def reversed_kernel(kernel: EnvKernel) -> np.ndarray:
    """Time-reversed kernel ``q_rev[i, j] = mu[j] q[j, i] / mu[i]``."""
    if np.any(kernel.mu <= 0.0):
        raise ModelInvalidError("time reversal needs strictly positive stationary mass")
    return _reverse(kernel.q, kernel.mu)


def _stationary_grad(q: np.ndarray, mu: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """Derivatives of the stationary vector from derivatives of the kernel.

    Differentiating ``mu q = mu`` with ``sum(mu) = 1`` gives
    ``dmu = mu dq (I - q + 1 mu)^{-1}`` (the rank-one shift makes the
    system nonsingular while preserving the zero-sum solution).
    """
    m = q.shape[0]
    shifted = np.eye(m) - q + np.outer(np.ones(m), mu)
    rhs = np.einsum("j,pjk->pk", mu, dq)
    return np.linalg.solve(shifted.T, rhs.T).T


def _reverse_grad(
    q: np.ndarray, mu: np.ndarray, q_rev: np.ndarray, dq: np.ndarray, dmu: np.ndarray
) -> np.ndarray:
    num = dmu[:, np.newaxis, :] * q.T[np.newaxis] + mu[np.newaxis, np.newaxis, :] * np.transpose(
        dq, (0, 2, 1)
    )
    return num / mu[np.newaxis, :, np.newaxis] - q_rev[np.newaxis] * (
        dmu[:, :, np.newaxis] / mu[np.newaxis, :, np.newaxis]
    )


def diagnose(kernel: EnvKernel, iid: Optional[bool] = None) -> ModelDiagnostics:
    """Compute the transience and ballisticity flags of a model.

    When ``iid`` is None the kernel is flagged i.i.d. iff all of its rows
    agree within 1e-12.
    """
    if iid is None:
        iid = bool(np.max(np.abs(kernel.q - kernel.q[0])) < 1e-12)
    tilde = kernel.support.tilde
    e_log_tilde = float(kernel.mu @ np.log(tilde))
    e_tilde = float(kernel.mu @ tilde)
    transient = e_log_tilde < 0.0
    ballistic = (e_tilde < 1.0) if iid else transient
    return ModelDiagnostics(
        e_log_tilde=e_log_tilde,
        e_tilde=e_tilde,
        iid=iid,
        transient_right=transient,
        ballistic=ballistic,
    )


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def preset_iid_two_values(
    a1: float,
    a2: float,
    p_bounds: Tuple[float, float] = (0.05, 0.95),
    epsilon: float = DEFAULT_EPSILON,
) -> ParamSpace:
    """I.i.d. environment on two states; the parameter is the weight on a1.

    Every row of the kernel equals the marginal law ``(p, 1-p)`` over
    ``(a1, a2)``, so sites are independent.
    """
    if abs(a1 - a2) < 1e-12:
        raise ModelInvalidError("a1 = a2 makes the weight parameter unidentifiable")
    lo, hi = p_bounds
    if not (0.0 < lo < hi < 1.0):
        raise ValueError("p bounds must satisfy 0 < lo < hi < 1")
    support = Support(values=np.sort([a1, a2]), epsilon=epsilon)
    i1 = support.index_of(a1)
    i2 = 1 - i1

    def q_of_theta(theta):
        row = np.empty(2)
        row[i1], row[i2] = theta[0], 1.0 - theta[0]
        drow = np.zeros(2)
        drow[i1], drow[i2] = 1.0, -1.0
        return np.tile(row, (2, 1)), np.tile(drow, (1, 2, 1))

    return ParamSpace(
        support=support,
        lower=np.array([lo]),
        upper=np.array([hi]),
        q_of_theta=q_of_theta,
        name="iid_two_values",
        constants={"a1": a1, "a2": a2},
    )


def preset_two_state_chain(
    a1: float,
    a2: float,
    bounds: Tuple[Sequence[float], Sequence[float]] = ((0.05, 0.05), (0.95, 0.95)),
    epsilon: float = DEFAULT_EPSILON,
) -> ParamSpace:
    """Two-state Markov environment with free staying probabilities.

    ``theta = (alpha, beta)`` where alpha is the probability of staying at
    a1 and beta the probability of staying at a2.  The chain degenerates to
    i.i.d. exactly on the line ``alpha = 1 - beta``.
    """
    if abs(a1 - a2) < 1e-12:
        raise ModelInvalidError("a1 = a2 makes (alpha, beta) unidentifiable")
    lower = np.asarray(bounds[0], dtype=float)
    upper = np.asarray(bounds[1], dtype=float)
    if lower.shape != (2,) or upper.shape != (2,):
        raise ValueError("bounds must give lower/upper pairs for (alpha, beta)")
    if lower.min() <= 0.0 or upper.max() >= 1.0:
        raise ValueError("(alpha, beta) bounds must sit strictly inside (0, 1)")
    support = Support(values=np.sort([a1, a2]), epsilon=epsilon)
    i1 = support.index_of(a1)
    # Row/column order follows the sorted support.
    perm = np.array([i1, 1 - i1]).argsort()

    d_alpha = np.array([[1.0, -1.0], [0.0, 0.0]])[np.ix_(perm, perm)]
    d_beta = np.array([[0.0, 0.0], [-1.0, 1.0]])[np.ix_(perm, perm)]

    def q_of_theta(theta):
        alpha, beta = theta
        q = np.array([[alpha, 1.0 - alpha], [1.0 - beta, beta]])[np.ix_(perm, perm)]
        return q, np.stack([d_alpha, d_beta])

    return ParamSpace(
        support=support,
        lower=lower,
        upper=upper,
        q_of_theta=q_of_theta,
        name="two_state_chain",
        constants={"a1": a1, "a2": a2},
    )


def free_entries_space(
    support: Support,
    mask: np.ndarray,
    bounds: Tuple[float, float] = (0.05, 0.95),
    name: str = "free_entries",
    constants: Optional[dict] = None,
) -> ParamSpace:
    """Kernel family parameterized by its structurally nonzero entries.

    ``theta`` lists the masked entries in row-major order; each row is
    renormalized by its sum at evaluation time, which keeps every theta in
    a plain box feasible (no simplex constraints for the optimizer).
    """
    mask = np.asarray(mask, dtype=bool)
    m = support.size
    if mask.shape != (m, m):
        raise ValueError(f"mask must be {m}x{m}")
    if np.any(mask.sum(axis=1) == 0):
        raise ValueError("every row needs at least one free entry")
    rows, cols = np.nonzero(mask)
    dim = rows.size
    lo, hi = bounds
    if not 0.0 < lo < hi:
        raise ValueError("entry bounds must satisfy 0 < lo < hi")

    def q_of_theta(theta):
        raw = np.zeros((m, m))
        raw[rows, cols] = theta
        sums = raw.sum(axis=1)
        q = raw / sums[:, np.newaxis]
        dq = np.zeros((dim, m, m))
        for p in range(dim):
            i, j = rows[p], cols[p]
            dq[p, i] = -raw[i] / sums[i] ** 2
            dq[p, i, j] += 1.0 / sums[i]
        return q, dq

    return ParamSpace(
        support=support,
        lower=np.full(dim, lo),
        upper=np.full(dim, hi),
        q_of_theta=q_of_theta,
        name=name,
        constants=constants or {},
    )


DNA_BASES = "ATCG"

# Dinucleotide binding free energies (units of k_B T) at room temperature;
# row = current base, column = next base.
DNA_BINDING_ENERGY = {
    ("A", "A"): 1.78, ("A", "T"): 1.55, ("A", "C"): 2.52, ("A", "G"): 2.22,
    ("T", "A"): 1.06, ("T", "T"): 1.78, ("T", "C"): 2.28, ("T", "G"): 2.54,
    ("C", "A"): 2.54, ("C", "T"): 2.22, ("C", "C"): 3.14, ("C", "G"): 3.85,
    ("G", "A"): 2.28, ("G", "T"): 2.52, ("G", "C"): 3.90, ("G", "G"): 3.14,
}


def dna_transition_mask() -> Tuple[np.ndarray, np.ndarray]:
    """Energy levels (descending) and the allowed-transition mask between them.

    Two energy levels can follow each other along a strand only when some
    dinucleotide pair realizing them chains through a shared middle base;
    collapsing the 16 dinucleotides onto their 10 distinct energies keeps
    exactly those transitions and zeroes out the rest.
    """
    energies = sorted({v for v in DNA_BINDING_ENERGY.values()}, reverse=True)
    index = {e: i for i, e in enumerate(energies)}
    mask = np.zeros((len(energies), len(energies)), dtype=bool)
    for (x, y), e1 in DNA_BINDING_ENERGY.items():
        for z in DNA_BASES:
            mask[index[e1], index[DNA_BINDING_ENERGY[(y, z)]]] = True
    return np.asarray(energies, dtype=float), mask


def preset_dna_unzipping(
    beta: float,
    g1: float,
    bounds: Tuple[float, float] = (0.05, 0.95),
    epsilon: float = DEFAULT_EPSILON,
) -> ParamSpace:
    """Unzipping-fork walk over the 10 dinucleotide binding-energy levels.

    Each level ``g0`` maps to the right-step probability
    ``1 / (1 + exp(beta * (g0 - g1)))`` where ``beta`` is the inverse
    temperature and ``g1`` the stretching work per opened base.  The free
    parameters are the structurally allowed transitions between levels.
    """
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    energies, mask = dna_transition_mask()
    omega = 1.0 / (1.0 + np.exp(beta * (energies - g1)))
    # Descending energies give ascending omega.
    support = Support(values=omega, epsilon=epsilon)
    return free_entries_space(
        support,
        mask,
        bounds=bounds,
        name="dna_unzipping",
        constants={"beta": beta, "g1": g1, "energies": energies.tolist()},
    )
