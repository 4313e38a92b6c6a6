"""Simulation of the environment, the walk, and its branching representation.

A nearest-neighbor walk on the integers starts at the origin and, at a site
whose environment state is ``a``, steps right with probability ``a``.  For a
transient-to-the-right model we run it to the first hitting time of a target
site ``n`` and read off the number of left steps the walk made at each of
the sites ``n, n-1, ..., 0``.  That left-step vector has the law of a
branching process with geometric offspring and unit immigration evolving in
the time-reversed environment, which this module can also simulate directly;
the two routes must agree in distribution and the tests hold them to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .env import EnvKernel, diagnose
from .errors import ModelInvalidError, WalkTimeoutError
from .rng import draw_index, stream

__all__ = [
    "EnvironmentPath",
    "WalkTrajectory",
    "LeftStepsSequence",
    "StationaryEstimate",
    "simulate_environment",
    "simulate_walk",
    "left_steps",
    "left_steps_at",
    "simulate_bpire",
    "simulate_bpire_batch",
    "estimate_invariant_density",
]

DEFAULT_MAX_STEPS_FACTOR = 200

# The odds series is truncated once its running product drops below this,
# with a hard cap on the number of terms for pathological draws.
SERIES_PRODUCT_FLOOR = 1e-12
SERIES_MAX_TERMS = 100_000

_BLOCK = 8192


def _cdf(probs: np.ndarray) -> np.ndarray:
    """Cumulative sums along the last axis with the final entry pinned to 1,
    so a uniform in [0, 1) always lands inside the table."""
    out = np.cumsum(probs, axis=-1)
    out[..., -1] = 1.0
    return out


def _frozen_int(a) -> np.ndarray:
    out = np.array(a, dtype=np.int64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EnvironmentPath:
    """Environment states (as support indices) over a contiguous site range."""

    states: np.ndarray
    lo: int
    hi: int

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen_int(self.states))
        if self.states.size != self.hi - self.lo + 1:
            raise ValueError("states must cover exactly the sites lo..hi")

    def state_at(self, site: int) -> int:
        if not self.lo <= site <= self.hi:
            raise IndexError(f"site {site} outside environment range [{self.lo}, {self.hi}]")
        return int(self.states[site - self.lo])


@dataclass(frozen=True)
class WalkTrajectory:
    """Positions of the walk from the origin up to its first visit of ``target``."""

    steps: np.ndarray
    target: int

    def __post_init__(self):
        object.__setattr__(self, "steps", _frozen_int(self.steps))
        if self.steps[0] != 0:
            raise ValueError("walk must start at the origin")
        if np.any(np.abs(np.diff(self.steps)) != 1):
            raise ValueError("walk must move by one site per step")
        if self.steps[-1] != self.target or np.any(self.steps[:-1] >= self.target):
            raise ValueError("walk must end at its first visit to the target")

    @property
    def hitting_time(self) -> int:
        return int(self.steps.size - 1)


@dataclass(frozen=True)
class LeftStepsSequence:
    """Left-step counts read from the target site back to the origin."""

    z: np.ndarray
    n: int

    def __post_init__(self):
        object.__setattr__(self, "z", _frozen_int(self.z))
        if self.z.size != self.n + 1:
            raise ValueError(f"expected {self.n + 1} entries, got {self.z.size}")
        if self.z[0] != 0:
            raise ValueError("the target site is hit for the first time, so z[0] must be 0")
        if np.any(self.z < 0):
            raise ValueError("left-step counts must be nonnegative")


@dataclass(frozen=True)
class StationaryEstimate:
    """Monte Carlo table of the invariant law of (environment state, count).

    ``table[i, x]`` estimates the stationary probability of seeing support
    state ``i`` together with generation size ``x``; mass beyond the
    truncation column is dropped.  ``series_tail`` is the largest running
    product left when the odds series hit its term cap (0 when every series
    converged below the floor).
    """

    truncation: int
    table: np.ndarray
    mc_samples: int
    series_tail: float = 0.0
    # Mean generation size over the same samples, free of the truncation
    # bias the table's columns carry (the conditional law is geometric, so
    # the full-tail mean is available in closed form per sample).
    mean_count: float = 0.0
    mean_count_se: float = 0.0

    def __post_init__(self):
        table = np.array(self.table, dtype=float, copy=True)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        if self.table.shape[1] != self.truncation + 1:
            raise ValueError("table must have truncation + 1 columns")
        if np.any(self.table < 0.0) or self.table.sum() > 1.0 + 1e-9:
            raise ValueError("table entries must be a (sub-)probability mass")


# ---------------------------------------------------------------------------
# Environment and walk
# ---------------------------------------------------------------------------


def simulate_environment(
    kernel: EnvKernel, span: Tuple[int, int], seed: int
) -> EnvironmentPath:
    """Draw a stationary environment over the sites ``span[0]..span[1]``.

    The origin state comes from the stationary law; sites to the right are
    chained with the kernel and sites to the left with its time reversal,
    which is exactly the conditional law of a two-sided stationary chain.
    """
    lo, hi = span
    if lo > 0 or hi < 0:
        raise ValueError("span must contain the origin")
    rng = stream(seed)
    mu_cdf = _cdf(kernel.mu)
    q_cdf = _cdf(kernel.q)
    rev_cdf = _cdf(kernel.q_rev)

    origin = draw_index(rng, mu_cdf)
    right = []
    state = origin
    for _ in range(hi):
        state = draw_index(rng, q_cdf[state])
        right.append(state)
    left = []
    state = origin
    for _ in range(-lo):
        state = draw_index(rng, rev_cdf[state])
        left.append(state)
    states = np.array(left[::-1] + [origin] + right, dtype=np.int64)
    return EnvironmentPath(states=states, lo=lo, hi=hi)


def simulate_walk(
    env_path: EnvironmentPath,
    kernel: EnvKernel,
    n: int,
    seed: int,
    max_steps: Optional[int] = None,
) -> WalkTrajectory:
    """Run the walk from the origin to its first visit of site ``n``.

    The supplied environment is extended leftward on demand (from its own
    reversed kernel, on a stream independent of the step draws) whenever
    the walk dips below the covered range; the input path itself is never
    mutated.  Raises WalkTimeoutError carrying the partial trajectory when
    ``max_steps`` (default ``200 * n``) is exhausted.
    """
    if n < 1 or env_path.hi < n:
        raise ValueError("environment must cover the target site n >= 1")
    if not diagnose(kernel).transient_right:
        raise ModelInvalidError("walk is not transient to the right; refusing to simulate")
    if max_steps is None:
        max_steps = DEFAULT_MAX_STEPS_FACTOR * n

    step_rng = stream(seed, 0)
    ext_rng = stream(seed, 1)
    rev_cdf = _cdf(kernel.q_rev)
    omega = kernel.support.values

    # Mutable copy of the environment, grown leftward as needed.
    states = list(env_path.states)
    lo = env_path.lo

    pos = 0
    path = [0]
    uniforms = step_rng.random(_BLOCK)
    cursor = 0
    while pos != n:
        if len(path) > max_steps:
            partial = np.array(path, dtype=np.int64)
            raise WalkTimeoutError(
                f"walk did not reach {n} within {max_steps} steps", trajectory=partial
            )
        if pos == lo - 1:
            states.insert(0, draw_index(ext_rng, rev_cdf[states[0]]))
            lo -= 1
        if cursor == _BLOCK:
            uniforms = step_rng.random(_BLOCK)
            cursor = 0
        pos += 1 if uniforms[cursor] < omega[states[pos - lo]] else -1
        cursor += 1
        path.append(pos)
    return WalkTrajectory(steps=np.array(path, dtype=np.int64), target=n)


def left_steps_at(traj: WalkTrajectory, m: int) -> LeftStepsSequence:
    """Left-step counts for the walk truncated at its first visit of ``m``.

    Entry ``k`` counts the steps from site ``m - k`` to ``m - k - 1`` made
    before that visit; sites below the origin are not part of the vector.
    """
    if not 1 <= m <= traj.target:
        raise ValueError(f"m must lie in [1, {traj.target}]")
    t_m = int(np.argmax(traj.steps == m))
    window = traj.steps[: t_m + 1]
    origins = window[:-1][np.diff(window) == -1]
    origins = origins[origins >= 0]
    z = np.bincount(m - origins, minlength=m + 1)
    return LeftStepsSequence(z=z, n=m)


def left_steps(traj: WalkTrajectory) -> LeftStepsSequence:
    """Left-step counts of a completed trajectory at its own target."""
    return left_steps_at(traj, traj.target)


# ---------------------------------------------------------------------------
# Branching-process route
# ---------------------------------------------------------------------------


def _geometric(rng: np.random.Generator, a: float, size: int) -> np.ndarray:
    """Geometric draws on {0, 1, ...} with success probability ``a``.

    Inversion of the CDF, ``floor(log u / log(1 - a))`` with u in (0, 1],
    keeps the draws identical across platforms.
    """
    u = 1.0 - rng.random(size)
    return np.floor(np.log(u) / np.log1p(-a)).astype(np.int64)


def simulate_bpire(kernel: EnvKernel, n: int, seed: int) -> LeftStepsSequence:
    """Simulate the branching process with immigration directly.

    The hidden chain runs with the reversed kernel from the stationary law;
    given its state ``a`` at step ``k+1``, the next generation is the sum of
    ``z[k] + 1`` geometric draws with success probability ``a``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = stream(seed)
    mu_cdf = _cdf(kernel.mu)
    rev_cdf = _cdf(kernel.q_rev)
    omega = kernel.support.values

    state = draw_index(rng, mu_cdf)
    z = np.zeros(n + 1, dtype=np.int64)
    for k in range(n):
        state = draw_index(rng, rev_cdf[state])
        z[k + 1] = _geometric(rng, omega[state], int(z[k]) + 1).sum()
    return LeftStepsSequence(z=z, n=n)


def simulate_bpire_batch(
    kernel: EnvKernel, n: int, n_paths: int, seed: int
) -> np.ndarray:
    """Vectorized batch of independent branching-process runs.

    Returns an ``(n_paths, n + 1)`` array of generation sizes.  All paths
    advance in lockstep on one stream, so the batch is deterministic for a
    given seed but is a different stream than per-path simulate_bpire calls.
    """
    if n < 1 or n_paths < 1:
        raise ValueError("n and n_paths must be at least 1")
    rng = stream(seed)
    mu_cdf = _cdf(kernel.mu)
    rev_cdf = _cdf(kernel.q_rev)
    omega = kernel.support.values

    states = np.searchsorted(mu_cdf, rng.random(n_paths), side="right")
    states = np.minimum(states, kernel.size - 1)
    z = np.zeros((n_paths, n + 1), dtype=np.int64)
    for k in range(n):
        u = rng.random(n_paths)
        states = (np.take(rev_cdf, states, axis=0) > u[:, np.newaxis]).argmax(axis=1)
        counts = z[:, k] + 1
        total = int(counts.sum())
        draws = np.floor(
            np.log(1.0 - rng.random(total))
            / np.repeat(np.log1p(-omega[states]), counts)
        ).astype(np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        z[:, k + 1] = np.add.reduceat(draws, offsets)
    return z


# ---------------------------------------------------------------------------
# Invariant density of the bivariate chain
# ---------------------------------------------------------------------------


def _odds_series(
    kernel: EnvKernel, start: int, n_paths: int, rng: np.random.Generator
) -> Tuple[np.ndarray, float]:
    """Sampled values of R = 1 + t_0 + t_0 t_1 + ... from a fixed start state.

    The chain steps rightward with the forward kernel and the series
    includes the start state's own odds ``t_0`` as its first factor.
    Truncation: running product below SERIES_PRODUCT_FLOOR, capped at
    SERIES_MAX_TERMS terms; the largest surviving product is returned so
    callers can bound the truncation error.
    """
    tilde = kernel.support.tilde
    q_cdf = _cdf(kernel.q)
    states = np.full(n_paths, start)
    prod = np.full(n_paths, tilde[start])
    total = 1.0 + prod
    tail = 0.0
    for _ in range(SERIES_MAX_TERMS):
        if float(prod.max()) < SERIES_PRODUCT_FLOOR:
            break
        u = rng.random(n_paths)
        states = (np.take(q_cdf, states, axis=0) > u[:, np.newaxis]).argmax(axis=1)
        prod = prod * tilde[states]
        total = total + prod
    else:
        tail = float(prod.max())
    return total, tail


def estimate_invariant_density(
    kernel: EnvKernel, truncation: int, mc_samples: int, seed: int
) -> StationaryEstimate:
    """Monte Carlo estimate of the invariant law of the bivariate chain.

    For each support state the conditional law of the generation size is
    geometric with rate ``1/R``, where R is the odds series started at that
    state (own odds included) and continued rightward with the forward
    kernel; note the direction, since reading the series along the reversed
    kernel instead does not satisfy the invariance equation for
    non-reversible models.  The table averages ``(1/R)(1 - 1/R)^x`` over
    ``mc_samples`` paths per state and weights by the stationary law.
    """
    if truncation < 0 or mc_samples < 1:
        raise ValueError("truncation must be >= 0 and mc_samples >= 1")
    if not diagnose(kernel).ballistic:
        raise ModelInvalidError("invariant density requires a ballistic model")
    table = np.empty((kernel.size, truncation + 1))
    tail = 0.0
    mean_count = 0.0
    mean_count_var = 0.0
    xs = np.arange(truncation + 1)
    for i in range(kernel.size):
        rng = stream(seed, i)
        r, t = _odds_series(kernel, i, mc_samples, rng)
        tail = max(tail, t)
        u = 1.0 / r
        table[i] = kernel.mu[i] * np.mean(
            u[:, np.newaxis] * (1.0 - u[:, np.newaxis]) ** xs[np.newaxis, :], axis=0
        )
        mean_count += kernel.mu[i] * float(np.mean(r - 1.0))
        mean_count_var += kernel.mu[i] ** 2 * float(np.var(r)) / mc_samples
    return StationaryEstimate(
        truncation=truncation,
        table=table,
        mc_samples=mc_samples,
        series_tail=tail,
        mean_count=mean_count,
        mean_count_se=math.sqrt(mean_count_var),
    )
