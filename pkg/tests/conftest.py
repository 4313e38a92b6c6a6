"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the package's own computation paths:
likelihoods are checked against exhaustive hidden-path enumeration and
closed-form mixtures, stationary vectors against power iteration, and
gradients against central finite differences.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from rwre import env, likelihood


@pytest.fixture(scope="session")
def two_state_space():
    """The synthetic-experiment model: S = {0.4, 0.8}, theta = (alpha, beta)."""
    return env.preset_two_state_chain(0.4, 0.8)


@pytest.fixture(scope="session")
def two_state_kernel(two_state_space):
    return two_state_space.kernel([0.2, 0.9])


@pytest.fixture(scope="session")
def iid_space():
    return env.preset_iid_two_values(0.7, 0.8)


def power_iteration_mu(q, iterations=1000):
    """Stationary vector as the row limit of q^k; independent of the solver."""
    q = np.asarray(q, dtype=float)
    out = np.linalg.matrix_power(q, iterations)
    return out[0]


def brute_force_loglik(support_values, q_rev, z, a0_index):
    """Exhaustive hidden-path enumeration of the conditional likelihood.

    Sums q_rev(a_{k-1}, a_k) g_{a_k}(z_{k-1}, z_k) over every hidden path,
    in log space; exponential in len(z), usable only for short sequences.
    """
    m = len(support_values)
    n = len(z) - 1
    paths = np.array(list(itertools.product(range(m), repeat=n)), dtype=np.int64)
    log_q = np.log(q_rev)
    log_g = np.array(
        [
            [likelihood.log_emission(support_values[b], int(z[k]), int(z[k + 1])) for b in range(m)]
            for k in range(n)
        ]
    )
    prev = np.concatenate([np.full((paths.shape[0], 1), a0_index), paths[:, :-1]], axis=1)
    path_logp = log_q[prev, paths].sum(axis=1) + log_g[np.arange(n)[np.newaxis, :], paths].sum(axis=1)
    return float(logsumexp(path_logp))


def iid_closed_form_loglik(p, a1, a2, z):
    """Two-value i.i.d. mixture likelihood, normalized emission included."""
    total = 0.0
    for k in range(1, len(z)):
        x, y = int(z[k - 1]), int(z[k])
        log_c = math.lgamma(x + y + 1) - math.lgamma(x + 1) - math.lgamma(y + 1)
        mix = p * a1 ** (x + 1) * (1 - a1) ** y + (1 - p) * a2 ** (x + 1) * (1 - a2) ** y
        total += log_c + math.log(mix)
    return total


def fd_gradient(fun, theta, h=1e-6):
    """Central finite differences of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty(theta.size)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fun(up) - fun(down)) / (2 * h)
    return grad


def random_left_steps(rng, n, high=5):
    """Arbitrary admissible observation vector (starts at zero)."""
    z = rng.integers(0, high, size=n + 1)
    z[0] = 0
    return z.astype(np.int64)
