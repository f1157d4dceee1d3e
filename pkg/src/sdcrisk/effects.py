"""Clustered multiplicative random effects sampled by collapsed Gibbs.

Cells share a random effect when allocated to the same cluster; the prior
over allocations is the exchangeable urn induced by a Dirichlet-process
prior with a Gamma base measure on the multiplicative scale.  Because the
Gamma base is conjugate to the Poisson likelihood, the per-cluster effect
integrates out in closed form (a negative-binomial marginal), so a sweep
reallocates one cell at a time using only running cluster sufficient
statistics, never the effect values themselves.  Effects are then redrawn
per cluster from their conditional Gamma, and the mass parameter is
updated through the usual Beta auxiliary-variable step.

The sweep itself is a numba kernel: cluster bookkeeping is O(1) per
reassignment and the whole sweep is linear in the number of cells times
the current number of clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import gammaln

from .design import DesignMatrix, linear_predictor
from .model import ModelState, Priors
from .table import ContingencyTable


@dataclass
class ClusterStats:
    """Per-cluster sufficient statistics: member count, summed cell counts,
    and summed pi-scaled predictors (the rate increment of the conjugate
    update)."""

    sizes: np.ndarray      # n_j, int
    count_sums: np.ndarray  # sum of f_k over members, int
    rate_sums: np.ndarray   # sum of pi*xi_k over members, float

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)


def canonical_labels(alloc: np.ndarray) -> tuple[int, ...]:
    """Relabel an allocation into restricted-growth form (labels numbered
    by first appearance), so equal set partitions compare equal."""
    mapping: dict[int, int] = {}
    out = []
    for lab in alloc:
        lab = int(lab)
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out.append(mapping[lab])
    return tuple(out)


def compute_cluster_stats(f: np.ndarray, mu: np.ndarray,
                          alloc: np.ndarray) -> ClusterStats:
    """Recompute all cluster statistics from scratch."""
    c = int(alloc.max()) + 1 if alloc.size else 0
    sizes = np.bincount(alloc, minlength=c)
    count_sums = np.bincount(alloc, weights=f, minlength=c).astype(np.int64)
    rate_sums = np.bincount(alloc, weights=mu, minlength=c)
    return ClusterStats(sizes.astype(np.int64), count_sums, rate_sums)


def audit_cluster_stats(f, mu, alloc, stats: ClusterStats, rel_tol=1e-9):
    """Check incrementally maintained statistics against a full recompute."""
    fresh = compute_cluster_stats(f, mu, alloc)
    if not np.array_equal(fresh.sizes, stats.sizes):
        raise RuntimeError("cluster size bookkeeping diverged from recount")
    if not np.array_equal(fresh.count_sums, stats.count_sums):
        raise RuntimeError("cluster count sums diverged from recount")
    scale = np.maximum(np.abs(fresh.rate_sums), 1.0)
    if np.any(np.abs(fresh.rate_sums - stats.rate_sums) > rel_tol * scale):
        raise RuntimeError("cluster rate sums drifted beyond tolerance")


def marginal_cell_loglik(f: int, mu: float, a: float, b: float) -> float:
    """Log mass of one cell count with its effect integrated out against
    the Gamma(a, b) base: a negative-binomial evaluated at f with
    exposure mu."""
    if mu == 0.0:
        return 0.0 if f == 0 else -math.inf
    return (a * math.log(b) - math.lgamma(a) + math.lgamma(a + f)
            + f * math.log(mu) - math.lgamma(f + 1.0)
            - (a + f) * math.log(b + mu))


def conditional_cell_loglik(f: int, mu: float, cluster_count_sum: int,
                            cluster_rate_sum: float, a: float, b: float) -> float:
    """Log predictive mass of one cell given the other members of a
    cluster: the marginal with the base updated by the cluster sums.

    The cluster statistics must not include the cell itself.
    """
    return marginal_cell_loglik(f, mu, a + cluster_count_sum,
                                b + cluster_rate_sum)


def cluster_marginal_loglik(f: np.ndarray, mu: np.ndarray,
                            a: float, b: float) -> float:
    """Joint log marginal of a block of cells sharing one effect."""
    f = np.asarray(f, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sf = float(f.sum())
    sm = float(mu.sum())
    pos = f > 0
    if np.any(pos & (mu == 0.0)):
        return -math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        cell_terms = np.where(pos, f * np.log(np.where(mu > 0, mu, 1.0)), 0.0)
    return float(a * math.log(b) - math.lgamma(a) + math.lgamma(a + sf)
                 - (a + sf) * math.log(b + sm)
                 + np.sum(cell_terms - gammaln(f + 1.0)))


def partition_log_prior(sizes, mass: float, n_cells: int) -> float:
    """Exact log mass of a labeled partition of ``n_cells`` items under the
    exchangeable urn with the given mass parameter."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size == 0 or np.any(sizes < 1):
        raise ValueError("cluster sizes must be positive")
    if int(sizes.sum()) != n_cells:
        raise ValueError(f"cluster sizes sum to {sizes.sum()}, expected {n_cells}")
    if not mass > 0:
        raise ValueError("mass must be positive")
    return float(math.lgamma(mass) - math.lgamma(mass + n_cells)
                 + sizes.size * math.log(mass) + np.sum(gammaln(sizes)))


@njit(cache=True)
def _sweep_kernel(f, mu, alloc, cl_n, cl_sf, cl_sx, slots, slot_pos, free,
                  n_active, n_free, next_slot, mass, a, b, scan, unis, w):
    # One full reallocation sweep. Cluster slots are recycled through a free
    # list so every update is O(1); labels are compacted by the caller.
    # Terms common to every candidate weight (f*log(mu) and log f!) are
    # dropped: the categorical draw is invariant to them.
    log_mass = math.log(mass)
    base_new = a * math.log(b) - math.lgamma(a)
    for t in range(scan.shape[0]):
        k = scan[t]
        fk = f[k]
        muk = mu[k]
        j = alloc[k]
        cl_n[j] -= 1
        cl_sf[j] -= fk
        cl_sx[j] -= muk
        if cl_n[j] == 0:
            p = slot_pos[j]
            last = slots[n_active - 1]
            slots[p] = last
            slot_pos[last] = p
            n_active -= 1
            free[n_free] = j
            n_free += 1
            cl_sx[j] = 0.0
            cl_sf[j] = 0
        lg_af = math.lgamma(a + fk)
        best = -1.0e300
        for p in range(n_active):
            jj = slots[p]
            aa = a + cl_sf[jj]
            bb = b + cl_sx[jj]
            v = (math.log(cl_n[jj]) + aa * math.log(bb) - math.lgamma(aa)
                 + math.lgamma(aa + fk) - (aa + fk) * math.log(bb + muk))
            w[p] = v
            if v > best:
                best = v
        v = log_mass + base_new + lg_af - (a + fk) * math.log(b + muk)
        w[n_active] = v
        if v > best:
            best = v
        total = 0.0
        for p in range(n_active + 1):
            w[p] = math.exp(w[p] - best)
            total += w[p]
        u = unis[t] * total
        acc = 0.0
        choice = n_active
        for p in range(n_active + 1):
            acc += w[p]
            if u <= acc:
                choice = p
                break
        if choice == n_active:
            if n_free > 0:
                n_free -= 1
                jj = free[n_free]
            else:
                jj = next_slot
                next_slot += 1
            cl_n[jj] = 1
            cl_sf[jj] = fk
            cl_sx[jj] = muk
            slots[n_active] = jj
            slot_pos[jj] = n_active
            n_active += 1
        else:
            jj = slots[choice]
            cl_n[jj] += 1
            cl_sf[jj] += fk
            cl_sx[jj] += muk
        alloc[k] = jj
    return n_active, n_free, next_slot


def reallocate_sweep(f, mu, alloc, mass, a, b, rng,
                     scan_order="ascending", audit=False):
    """Run one collapsed reallocation sweep over all cells.

    Returns the new allocation vector with contiguous labels and the
    matching ClusterStats.  ``scan_order`` is "ascending" or "random".
    """
    f = np.ascontiguousarray(f, dtype=np.int64)
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    K = len(f)
    alloc = np.ascontiguousarray(alloc, dtype=np.int64).copy()
    c0 = int(alloc.max()) + 1
    cap = K + 2
    cl_n = np.zeros(cap, dtype=np.int64)
    cl_sf = np.zeros(cap, dtype=np.int64)
    cl_sx = np.zeros(cap, dtype=np.float64)
    cl_n[:c0] = np.bincount(alloc, minlength=c0)
    cl_sf[:c0] = np.bincount(alloc, weights=f, minlength=c0).astype(np.int64)
    cl_sx[:c0] = np.bincount(alloc, weights=mu, minlength=c0)
    slots = np.zeros(cap, dtype=np.int64)
    slot_pos = np.zeros(cap, dtype=np.int64)
    live = np.nonzero(cl_n[:c0])[0]
    slots[: len(live)] = live
    slot_pos[live] = np.arange(len(live))
    free = np.zeros(cap, dtype=np.int64)

    if scan_order == "random":
        scan = rng.permutation(K).astype(np.int64)
    else:
        scan = np.arange(K, dtype=np.int64)
    unis = rng.random(K)
    w = np.empty(cap + 1, dtype=np.float64)

    n_active, _, _ = _sweep_kernel(
        f, mu, alloc, cl_n, cl_sf, cl_sx, slots, slot_pos, free,
        len(live), 0, c0, float(mass), float(a), float(b), scan, unis, w,
    )
    labels, new_alloc = np.unique(alloc, return_inverse=True)
    assert len(labels) == n_active
    stats = ClusterStats(
        sizes=cl_n[labels].copy(),
        count_sums=cl_sf[labels].copy(),
        rate_sums=cl_sx[labels].copy(),
    )
    if audit:
        audit_cluster_stats(f, mu, new_alloc, stats)
    return new_alloc.astype(np.int64), stats


def draw_cluster_effects(stats: ClusterStats, priors: Priors, rng) -> np.ndarray:
    """Independent conditional draws of each cluster's multiplicative
    effect: Gamma(a + count_sum, b + rate_sum), rate parameterization."""
    shape = priors.base_shape + stats.count_sums
    rate = priors.base_rate + stats.rate_sums
    return rng.gamma(shape, 1.0 / rate)


def gibbs_reallocate(table: ContingencyTable, design: DesignMatrix,
                     state: ModelState, priors: Priors, rng,
                     scan_order="ascending", audit=False) -> ModelState:
    """One collapsed reallocation sweep; cluster effects are refreshed from
    their conditionals so the returned state is complete and valid."""
    f = table.counts_for(design.cells)
    mu = table.pi * linear_predictor(design, state.beta)
    alloc, stats = reallocate_sweep(f, mu, state.alloc, state.mass,
                                    priors.base_shape, priors.base_rate,
                                    rng, scan_order=scan_order, audit=audit)
    omega = draw_cluster_effects(stats, priors, rng)
    return ModelState(state.beta.copy(), alloc, omega, state.mass)


def redraw_cluster_effects(table: ContingencyTable, design: DesignMatrix,
                           state: ModelState, priors: Priors, rng) -> ModelState:
    """Redraw every cluster's effect from its conditional Gamma, holding
    the allocation fixed."""
    f = table.counts_for(design.cells)
    mu = table.pi * linear_predictor(design, state.beta)
    stats = compute_cluster_stats(f, mu, state.alloc)
    omega = draw_cluster_effects(stats, priors, rng)
    return ModelState(state.beta.copy(), state.alloc.copy(), omega, state.mass)


def sample_mass(n_clusters: int, n_cells: int, m_prev: float,
                priors: Priors, rng) -> float:
    """One draw of the clustering mass through the Beta auxiliary-variable
    scheme: eta ~ Beta(m+1, K), then a two-component Gamma mixture."""
    s, r = priors.mass_shape, priors.mass_rate
    if n_cells == 0:
        return float(rng.gamma(s, 1.0 / r))
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    eta = rng.beta(m_prev + 1.0, n_cells)
    rate = r - math.log(eta)
    odds = (s + n_clusters - 1.0) / (n_cells * rate)
    p_high = odds / (1.0 + odds)
    if rng.random() < p_high:
        shape = s + n_clusters
    else:
        shape = s + n_clusters - 1.0
    return float(rng.gamma(shape, 1.0 / rate))
