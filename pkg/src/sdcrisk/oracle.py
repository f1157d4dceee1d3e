"""Independent brute-force references used by the test and acceptance
suites: exhaustive set-partition enumeration, exact small-table partition
posteriors, adaptive quadrature, and Monte Carlo references.

These are deliberately simple and often exponential-time; they exist to
validate the fast paths, not to be fast themselves.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from .effects import cluster_marginal_loglik, partition_log_prior

MAX_ENUM_CELLS = 10


def enumerate_partitions(n: int):
    """All set partitions of {0..n-1}, each as a tuple of per-item labels
    in restricted-growth form (first occurrences in increasing order)."""
    if not 1 <= n <= MAX_ENUM_CELLS:
        raise ValueError(f"partition enumeration limited to 1..{MAX_ENUM_CELLS} items")

    def grow(labels, n_used):
        if len(labels) == n:
            yield tuple(labels)
            return
        for lab in range(n_used + 1):
            labels.append(lab)
            yield from grow(labels, max(n_used, lab + 1))
            labels.pop()

    return list(grow([], 0))


def bell_number(n: int) -> int:
    """Number of set partitions of n items, by the triangle recurrence."""
    if n < 1:
        return 1
    row = [1]
    for _ in range(n - 1):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[-1]


def partition_sizes(labels) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64))


def exact_partition_posterior(f, mu, mass: float, a: float, b: float):
    """Exact posterior over all partitions of a small cell set, with the
    fixed-effects part held fixed.

    ``f`` are the cell counts and ``mu`` the pi-scaled predictors.  Every
    partition's unnormalized weight is its urn prior mass times the product
    of per-cluster marginal likelihoods.  Returns (partitions, probs).
    """
    f = np.asarray(f, dtype=np.int64)
    mu = np.asarray(mu, dtype=np.float64)
    K = len(f)
    if K > 8:
        raise ValueError("exact posterior limited to 8 cells")
    parts = enumerate_partitions(K)
    logw = np.empty(len(parts))
    for i, labels in enumerate(parts):
        lab = np.asarray(labels)
        sizes = partition_sizes(lab)
        lw = partition_log_prior(sizes, mass, K)
        for j in range(len(sizes)):
            members = lab == j
            lw += cluster_marginal_loglik(f[members], mu[members], a, b)
        logw[i] = lw
    logw -= logw.max()
    probs = np.exp(logw)
    probs /= probs.sum()
    return parts, probs


def urn_sequential_log_joint(labels, f, mu, mass: float, a: float, b: float) -> float:
    """Log joint mass of (partition, counts) built as a product of
    sequential urn predictive terms; identical by telescoping to the
    prior-times-marginal product used by exact_partition_posterior."""
    labels = np.asarray(labels, dtype=np.int64)
    f = np.asarray(f, dtype=np.int64)
    mu = np.asarray(mu, dtype=np.float64)
    K = len(labels)
    total = 0.0
    seen_sizes: dict[int, int] = {}
    for i in range(K):
        lab = int(labels[i])
        members = (labels[:i] == lab)
        before = cluster_marginal_loglik(f[:i][members], mu[:i][members], a, b) \
            if members.any() else 0.0
        with_cell = cluster_marginal_loglik(
            np.append(f[:i][members], f[i]),
            np.append(mu[:i][members], mu[i]), a, b)
        if lab in seen_sizes:
            total += math.log(seen_sizes[lab] / (mass + i))
        else:
            total += math.log(mass / (mass + i))
        total += with_cell - before
        seen_sizes[lab] = seen_sizes.get(lab, 0) + 1
    return total


def quadrature(fn, lower, upper, tol=1e-10) -> float:
    """Adaptive quadrature with an error guard."""
    value, err = integrate.quad(fn, lower, upper, epsabs=tol, epsrel=tol,
                                limit=500)
    if err > max(tol, tol * abs(value)) * 100:
        raise RuntimeError(
            f"quadrature did not reach tolerance {tol}: estimate {value} "
            f"with error {err}"
        )
    return value


def mc_reference(draw, n: int, statistic=None, rng=None):
    """Monte Carlo mean and standard error of ``statistic`` applied to
    ``draw(rng, size)`` samples."""
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(draw(rng, n), dtype=np.float64)
    if statistic is not None:
        x = np.asarray(statistic(x), dtype=np.float64)
    mean = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(len(x)))
    return mean, se
