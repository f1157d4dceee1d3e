"""Posterior samplers and multi-chain orchestration.

The fixed effects move by a metric-preconditioned Langevin proposal
(Metropolis-adjusted, position-dependent Gaussian built from the expected
information), with two alternatives: independent Gaussian draws from a
Laplace approximation of the fixed-effects posterior, and freezing the
fixed effects at their maximum-likelihood fit obtained by iterative
proportional fitting.  Random effects are updated either per cell from
their conjugate Gamma conditionals (parametric variant) or by the
collapsed clustering sweep (nonparametric variant), followed by the mass
update.  Multiple chains run independently from overdispersed starts and
are pooled through the potential-scale-reduction diagnostic.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from . import effects as eff
from .design import DesignMatrix, DesignSpec, INDEPENDENCE, OVERALL_MEAN, ALL_TWO_WAY
from .model import ModelState, Priors, metric_cholesky
from .table import ContingencyTable

CHECKPOINT_VERSION = 1


class FitError(RuntimeError):
    """Optimization failure; carries the last gradient norm."""

    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class ChainConfig:
    """Settings for one multi-chain run."""

    n_chains: int = 10
    burn_in: int = 5000
    keep: int = 10000
    thin: int = 1
    epsilon: float = 0.5
    seed: int = 0
    scan_order: str = "ascending"   # or "random"
    rhat_threshold: float = 1.1
    adapt_window: int = 50
    audit_every: int = 1000
    n_monitored_uniques: int = 100
    n_workers: int = 1
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0
    keep_cluster_effects: bool = True
    identical_chain_seeds: bool = False  # diagnostic aid: zero between-chain variance

    def __post_init__(self):
        for name in ("n_chains", "burn_in", "keep", "thin"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.keep % self.thin:
            raise ValueError("keep must be a multiple of thin")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.scan_order not in ("ascending", "random"):
            raise ValueError(f"unknown scan order {self.scan_order!r}")

    @property
    def n_kept(self) -> int:
        return self.keep // self.thin


@dataclass
class PosteriorDraws:
    """Kept draws, stacked per chain."""

    unique_cells: np.ndarray        # flat ids of sample uniques, sorted
    pi: float
    beta: np.ndarray                # (chains, kept, q)
    mass: np.ndarray                # (chains, kept)
    n_clusters: np.ndarray          # (chains, kept)
    lambda_uniques: np.ndarray      # (chains, kept, n_uniques)
    cluster_effects: list | None    # per chain: list of per-draw effect arrays

    @property
    def n_chains(self) -> int:
        return self.beta.shape[0]

    @property
    def n_kept(self) -> int:
        return self.beta.shape[1]

    def pooled_lambda_uniques(self) -> np.ndarray:
        """All chains concatenated: (chains*kept, n_uniques)."""
        return self.lambda_uniques.reshape(-1, self.lambda_uniques.shape[-1])


@dataclass
class Diagnostics:
    rhat: dict[str, float]
    converged: bool
    acceptance: np.ndarray
    epsilon: np.ndarray
    rhat_threshold: float

    def max_rhat(self):
        return max(self.rhat.values()) if self.rhat else 1.0


# ---------------------------------------------------------------------------
# Fixed-effects moves


def _beta_logpost(f, mu, beta, variance):
    # Poisson terms without log f! (constant in beta) plus Gaussian prior.
    pos = f > 0
    if np.any(mu[pos] <= 0):
        return -math.inf
    ll = float(np.sum(f[pos] * np.log(mu[pos])) - mu.sum())
    return ll - 0.5 * float(np.dot(beta, beta)) / variance


def _grad_metric_arrays(f, W, mu, beta, variance):
    grad = np.asarray(W.T @ (f - mu)) - beta / variance
    if sp.issparse(W):
        metric = np.asarray((W.T @ W.multiply(mu[:, None])).todense())
    else:
        metric = W.T @ (W * mu[:, None])
    metric[np.diag_indices(len(beta))] += 1.0 / variance
    return grad, metric


def _smmala_arrays(f, W, pi, omega_by_cell, beta, xi, epsilon, variance, rng):
    """One preconditioned Langevin proposal with Metropolis correction.

    Returns (beta, xi, accepted); on rejection the inputs come back
    unchanged.  Raises np.linalg.LinAlgError if the metric cannot be
    factorized at the current point.
    """
    mu = pi * xi * omega_by_cell
    grad, metric = _grad_metric_arrays(f, W, mu, beta, variance)
    L = metric_cholesky(metric)

    def solve_metric(vec):
        return np.linalg.solve(L.T, np.linalg.solve(L, vec))

    drift = beta + 0.5 * epsilon**2 * solve_metric(grad)
    z = rng.standard_normal(len(beta))
    prop = drift + epsilon * np.linalg.solve(L.T, z)

    with np.errstate(over="ignore"):
        xi_prop = np.exp(W @ prop)
    if not np.all(np.isfinite(xi_prop)):
        return beta, xi, False
    mu_prop = pi * xi_prop * omega_by_cell

    def log_q(to, fro, fro_mu):
        g, M = _grad_metric_arrays(f, W, fro_mu, fro, variance)
        try:
            Lf = metric_cholesky(M)
        except np.linalg.LinAlgError:
            return None, None
        mean = fro + 0.5 * epsilon**2 * np.linalg.solve(
            Lf.T, np.linalg.solve(Lf, g))
        diff = to - mean
        half = Lf.T @ diff
        logdet = 2.0 * np.sum(np.log(np.diag(Lf)))
        val = (0.5 * logdet - len(fro) * math.log(epsilon)
               - 0.5 * len(fro) * math.log(2 * math.pi)
               - 0.5 * float(half @ half) / epsilon**2)
        return val, Lf

    # forward density (metric at current point already factorized)
    diff = prop - drift
    half = L.T @ diff
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    log_q_fwd = (0.5 * logdet - len(beta) * math.log(epsilon)
                 - 0.5 * len(beta) * math.log(2 * math.pi)
                 - 0.5 * float(half @ half) / epsilon**2)
    log_q_rev, _ = log_q(beta, prop, mu_prop)
    if log_q_rev is None:
        return beta, xi, False

    log_alpha = (_beta_logpost(f, mu_prop, prop, variance)
                 - _beta_logpost(f, mu, beta, variance)
                 + log_q_rev - log_q_fwd)
    if math.log(rng.random()) < log_alpha:
        return prop, xi_prop, True
    return beta, xi, False


def smmala_step(table: ContingencyTable, design: DesignMatrix,
                state: ModelState, epsilon: float, rng,
                priors: Priors = Priors()):
    """Single fixed-effects update on a full model state."""
    f = table.counts_for(design.cells).astype(np.float64)
    xi = np.exp(design.matrix @ state.beta) if design.n_columns else np.ones(design.n_rows)
    omega_by_cell = state.omega[state.alloc]
    beta, _, accepted = _smmala_arrays(
        f, design.matrix, table.pi, omega_by_cell, state.beta, xi,
        epsilon, priors.beta_variance, rng)
    new = state.copy()
    new.beta = beta
    return new, accepted


def laplace_fit(table: ContingencyTable, design: DesignMatrix,
                priors: Priors, max_iter: int = 500, grad_tol: float = 1e-6):
    """Gaussian approximation of the fixed-effects posterior with no
    random-effect term: mean at the posterior mode, covariance from the
    inverse curvature there.

    The mode search uses only gradient evaluations (no K x q dense
    storage).  Returns (mode, covariance).
    """
    q = design.n_columns
    if q == 0:
        raise FitError("overall-mean design has no fixed effects to fit")
    f = table.counts_for(design.cells).astype(np.float64)
    W = design.matrix
    pi = table.pi
    v = priors.beta_variance

    def neg_logpost(beta):
        mu = pi * np.exp(W @ beta)
        return -(float(f @ (W @ beta)) - mu.sum()
                 - 0.5 * float(beta @ beta) / v)

    def neg_grad(beta):
        mu = pi * np.exp(W @ beta)
        return -(W.T @ (f - mu) - beta / v)

    res = scipy.optimize.minimize(
        neg_logpost, np.zeros(q), jac=neg_grad, method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-14})
    grad_norm = float(np.max(np.abs(res.jac)))
    if grad_norm > grad_tol:
        raise FitError(
            f"mode search stopped with gradient sup-norm {grad_norm:.3e} "
            f"after {res.nit} iterations", grad_norm=grad_norm)
    mode = res.x
    mu = pi * np.exp(W @ mode)
    metric = (W.T @ W.multiply(mu[:, None])).toarray()
    metric[np.diag_indices(q)] += 1.0 / v
    L = metric_cholesky(metric)
    identity = np.eye(q)
    cov = np.linalg.solve(L.T, np.linalg.solve(L, identity))
    return mode, cov


# ---------------------------------------------------------------------------
# Iterative proportional fitting


@dataclass
class IPFResult:
    fitted: np.ndarray        # dense cell means, length K, zeros on structural zeros
    converged: bool
    n_sweeps: int
    max_margin_gap: float


def _margin_sets(kind: str, n_vars: int):
    if kind == OVERALL_MEAN:
        return [()]
    if kind == INDEPENDENCE:
        return [(j,) for j in range(n_vars)]
    if kind == ALL_TWO_WAY:
        return list(itertools.combinations(range(n_vars), 2))
    raise ValueError(f"unknown design kind {kind!r}")


def ipf_fit(table: ContingencyTable, kind: str, tol: float = 1e-8,
            max_iter: int = 200) -> IPFResult:
    """Fit cell means to the observed margins implied by a design kind by
    iterative proportional scaling over non-structural cells.

    Divergent (never-converging) cases are returned with
    ``converged=False`` rather than raised: zero fitted margins against
    zero observed margins are treated as matched.
    """
    schema = table.schema
    cards = schema.cardinalities
    obs = table.dense_counts().reshape(cards).astype(np.float64)
    active = np.ones(cards, dtype=bool)
    for k in table.structural_zeros:
        active[schema.decode(k)] = False
    margins = _margin_sets(kind, schema.n_vars)
    axes_of = {S: tuple(j for j in range(schema.n_vars) if j not in S)
               for S in margins}
    obs_margins = {S: obs.sum(axis=axes_of[S]) for S in margins}

    fitted = np.where(active, 1.0, 0.0)
    n_sweeps = 0
    gap = math.inf
    for n_sweeps in range(1, max_iter + 1):
        for S in margins:
            fit_m = fitted.sum(axis=axes_of[S])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(fit_m > 0, obs_margins[S] / np.where(fit_m > 0, fit_m, 1.0), 0.0)
            shape = [cards[j] if j in S else 1 for j in range(schema.n_vars)]
            fitted = fitted * ratio.reshape(shape)
        gap = max(
            float(np.max(np.abs(fitted.sum(axis=axes_of[S]) - obs_margins[S])))
            for S in margins)
        if gap < tol:
            return IPFResult(fitted.reshape(-1), True, n_sweeps, gap)
    return IPFResult(fitted.reshape(-1), False, n_sweeps, gap)


def design_coded_coefficients(design: DesignMatrix, log_xi: np.ndarray,
                              valid: np.ndarray | None = None):
    """Express per-cell log predictors in the design's coding: returns
    (intercept, beta) with log_xi ~= intercept + row . beta on the valid
    cells.  Used to report frozen maximum-likelihood fixed effects."""
    q = design.n_columns
    rows = design.matrix
    if valid is None:
        valid = np.isfinite(log_xi)
    A = sp.hstack([sp.csr_matrix(np.ones((design.n_rows, 1))), rows]).tocsr()
    A = A[valid]
    sol = sp.linalg.lsqr(A, log_xi[valid], atol=1e-12, btol=1e-12,
                         iter_lim=10 * (q + 1))[0]
    return float(sol[0]), sol[1:]


# ---------------------------------------------------------------------------
# Convergence diagnostic


def gelman_rubin(chains) -> float:
    """Potential scale reduction from between/within-chain variances,
    clamped below at 1 (identical chains give exactly 1; zero within-chain
    variance is defined as 1)."""
    arr = np.asarray(chains, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError("need >= 2 chains of equal length")
    m, n = arr.shape
    if n < 10:
        raise ValueError("chains too short for the diagnostic (need >= 10)")
    W = float(arr.var(axis=1, ddof=1).mean())
    if W == 0.0:
        return 1.0
    B_over_n = float(arr.mean(axis=1).var(ddof=1))
    V = (n - 1) / n * W + B_over_n
    return float(math.sqrt(max(V / W, 1.0)))


# ---------------------------------------------------------------------------
# Chain runner


@dataclass
class _ModelMode:
    """Resolved update plan for one run."""

    effects: str                    # "dp" | "parametric"
    beta: str                       # "smmala" | "laplace" | "fixed" | "none"
    laplace_mode: np.ndarray | None = None
    laplace_chol: np.ndarray | None = None
    fixed_xi: np.ndarray | None = None
    fixed_beta: np.ndarray | None = None


def resolve_mode(table: ContingencyTable, design: DesignMatrix,
                 priors: Priors, effects_kind: str,
                 beta_update: str | None = None) -> _ModelMode:
    """Pick and prepare the update rules for (effects_kind, beta_update).

    ``beta_update``: None picks the default (Langevin) when the design has
    columns; "laplace" precomputes the Gaussian approximation; "mle"
    freezes the fixed effects at the IPF fit of the design's margins.
    """
    if effects_kind not in ("dp", "parametric"):
        raise ValueError(f"unknown effects kind {effects_kind!r}")
    q = design.n_columns
    if q == 0:
        return _ModelMode(effects=effects_kind, beta="none")
    beta_update = beta_update or "smmala"
    if beta_update == "smmala":
        return _ModelMode(effects=effects_kind, beta="smmala")
    if beta_update == "laplace":
        mode, cov = laplace_fit(table, design, priors)
        return _ModelMode(effects=effects_kind, beta="laplace",
                          laplace_mode=mode, laplace_chol=np.linalg.cholesky(cov))
    if beta_update == "mle":
        if effects_kind != "dp" or design.spec.kind == OVERALL_MEAN:
            raise ValueError(
                "frozen maximum-likelihood fixed effects require clustered "
                "random effects and a design with columns")
        ipf = ipf_fit(table, design.spec.kind)
        fitted = ipf.fitted[design.cells]
        xi = fitted / table.pi
        with np.errstate(divide="ignore"):
            log_xi = np.log(np.where(xi > 0, xi, 1.0))
        _, beta = design_coded_coefficients(design, log_xi, valid=xi > 0)
        return _ModelMode(effects="dp", beta="fixed", fixed_xi=xi,
                          fixed_beta=beta)
    raise ValueError(f"unknown beta update {beta_update!r}")


def _chain_seed_sequences(config: ChainConfig):
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.n_chains)
    if config.identical_chain_seeds:
        children = [children[0]] * config.n_chains
    return children


def _checkpoint_path(directory, chain_id):
    return os.path.join(directory, f"chain{chain_id:03d}.npz")


def _save_checkpoint(path, config_hash, chain_id, done, state, rng, epsilon,
                     acc_count, win_count, win_acc, records):
    omega_draws = np.empty(len(records["omega"]), dtype=object)
    for i, arr in enumerate(records["omega"]):
        omega_draws[i] = arr
    payload = {
        "version": np.int64(CHECKPOINT_VERSION),
        "chain_id": np.int64(chain_id),
        "done": np.int64(done),
        "beta": state.beta,
        "alloc": state.alloc,
        "omega": state.omega,
        "mass": np.float64(state.mass),
        "epsilon": np.float64(epsilon),
        "acc_count": np.int64(acc_count),
        "win_count": np.int64(win_count),
        "win_acc": np.int64(win_acc),
        "rng_state": np.frombuffer(
            json.dumps(rng.bit_generator.state).encode(), dtype=np.uint8),
        "config_hash": np.frombuffer(config_hash.encode(), dtype=np.uint8),
        "rec_beta": np.asarray(records["beta"]),
        "rec_mass": np.asarray(records["mass"]),
        "rec_c": np.asarray(records["c"]),
        "rec_lam": np.asarray(records["lam"]),
        "rec_omega": omega_draws,
    }
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    os.replace(tmp, path)


def _load_checkpoint(path, config_hash):
    with np.load(path, allow_pickle=True) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise RuntimeError(f"{path}: unsupported checkpoint version {int(z['version'])}")
        stored_hash = z["config_hash"].tobytes().decode()
        if stored_hash != config_hash:
            raise RuntimeError(
                f"{path}: checkpoint belongs to a different run configuration")
        state = ModelState(z["beta"].copy(), z["alloc"].copy(),
                           z["omega"].copy(), float(z["mass"]))
        rng_state = json.loads(z["rng_state"].tobytes().decode())
        records = {
            "beta": [row for row in z["rec_beta"]],
            "mass": list(z["rec_mass"]),
            "c": [int(v) for v in z["rec_c"]],
            "lam": [row for row in z["rec_lam"]],
            "omega": list(z["rec_omega"]),
        }
        return (int(z["done"]), state, rng_state, float(z["epsilon"]),
                int(z["acc_count"]), int(z["win_count"]), int(z["win_acc"]),
                records)


def _init_state(q, n_cells, mode: _ModelMode, priors: Priors, rng) -> ModelState:
    # Overdispersed starts: prior draws for effects and mass, a loose
    # Gaussian for the fixed effects.
    if mode.beta == "fixed":
        beta = mode.fixed_beta.copy()
    else:
        beta = rng.normal(0.0, 0.5, q)
    if mode.effects == "parametric":
        alloc = np.arange(n_cells, dtype=np.int64)
        omega = rng.gamma(priors.base_shape, 1.0 / priors.base_rate, n_cells)
        return ModelState(beta, alloc, omega, 1.0)
    mass = float(rng.gamma(priors.mass_shape, 1.0 / priors.mass_rate))
    alloc = np.zeros(n_cells, dtype=np.int64)
    c = 0
    for i in range(n_cells):
        if rng.random() < mass / (mass + i):
            alloc[i] = c
            c += 1
        else:
            alloc[i] = alloc[rng.integers(i)]
    _, alloc = np.unique(alloc[:n_cells], return_inverse=True)
    omega = rng.gamma(priors.base_shape, 1.0 / priors.base_rate, int(alloc.max()) + 1)
    return ModelState(beta, alloc.astype(np.int64), omega, mass)


def _run_single_chain(chain_id, f, W, pi, unique_pos, priors, config,
                      mode: _ModelMode, config_hash, stop_after=None):
    """Run one chain to completion (or to ``stop_after`` iterations, for
    checkpoint testing).  Returns a dict of stacked kept draws."""
    n_cells = len(f)
    q = W.shape[1]
    seed_seq = _chain_seed_sequences(config)[chain_id]
    rng = np.random.default_rng(seed_seq)
    f_float = f.astype(np.float64)

    state = _init_state(q, n_cells, mode, priors, rng)
    epsilon = config.epsilon
    acc_count = 0
    win_count = 0
    win_acc = 0
    records = {"beta": [], "mass": [], "c": [], "lam": [], "omega": []}
    start_iter = 0

    ck_path = None
    if config.checkpoint_dir:
        os.makedirs(config.checkpoint_dir, exist_ok=True)
        ck_path = _checkpoint_path(config.checkpoint_dir, chain_id)
        if os.path.exists(ck_path):
            (start_iter, state, rng_state, epsilon, acc_count, win_count,
             win_acc, records) = _load_checkpoint(ck_path, config_hash)
            rng = np.random.default_rng()
            rng.bit_generator.state = rng_state

    if mode.beta == "fixed":
        xi = mode.fixed_xi.copy()
    elif q:
        xi = np.exp(W @ state.beta)
    else:
        xi = np.ones(n_cells)

    total = config.burn_in + config.keep
    a, b = priors.base_shape, priors.base_rate

    for it in range(start_iter, total):
        in_burn = it < config.burn_in
        # fixed effects
        if mode.beta == "smmala":
            omega_by_cell = state.omega[state.alloc]
            state.beta, xi, accepted = _smmala_arrays(
                f_float, W, pi, omega_by_cell, state.beta, xi, epsilon,
                priors.beta_variance, rng)
            if accepted:
                acc_count += 1
                win_acc += 1
            win_count += 1
            if in_burn and win_count >= config.adapt_window:
                rate = win_acc / win_count
                if rate > 0.7:
                    epsilon *= 1.2
                elif rate < 0.5:
                    epsilon /= 1.2
                win_count = win_acc = 0
            if it == config.burn_in - 1:
                acc_count = 0  # report post-burn acceptance only
        elif mode.beta == "laplace":
            z = rng.standard_normal(q)
            state.beta = mode.laplace_mode + mode.laplace_chol @ z
            xi = np.exp(W @ state.beta)

        # random effects
        mu = pi * xi
        if mode.effects == "dp":
            audit = config.audit_every > 0 and (it + 1) % config.audit_every == 0
            state.alloc, stats = eff.reallocate_sweep(
                f, mu, state.alloc, state.mass, a, b, rng,
                scan_order=config.scan_order, audit=audit)
            state.omega = eff.draw_cluster_effects(stats, priors, rng)
            state.mass = eff.sample_mass(len(state.omega), n_cells,
                                         state.mass, priors, rng)
        else:
            state.omega = rng.gamma(a + f, 1.0 / (b + mu))

        if not in_burn and (it - config.burn_in) % config.thin == 0:
            lam = xi[unique_pos] * state.omega[state.alloc[unique_pos]]
            records["beta"].append(state.beta.copy())
            records["mass"].append(state.mass)
            records["c"].append(len(state.omega))
            records["lam"].append(lam)
            if config.keep_cluster_effects and mode.effects == "dp":
                records["omega"].append(state.omega.copy())

        done = it + 1
        if ck_path and config.checkpoint_every and done % config.checkpoint_every == 0:
            _save_checkpoint(ck_path, config_hash, chain_id, done, state, rng,
                             epsilon, acc_count, win_count, win_acc, records)
        if stop_after is not None and done - start_iter >= stop_after and done < total:
            if ck_path:
                _save_checkpoint(ck_path, config_hash, chain_id, done, state,
                                 rng, epsilon, acc_count, win_count, win_acc,
                                 records)
            return None

    n_kept = config.n_kept
    return {
        "beta": np.asarray(records["beta"]).reshape(n_kept, q),
        "mass": np.asarray(records["mass"]),
        "c": np.asarray(records["c"], dtype=np.int64),
        "lam": np.asarray(records["lam"]).reshape(n_kept, len(unique_pos)),
        "omega": records["omega"],
        "acceptance": acc_count / max(config.keep, 1) if mode.beta == "smmala" else math.nan,
        "epsilon": epsilon,
    }


def _chain_worker(args):
    return _run_single_chain(*args)


def run_chains(table: ContingencyTable, design: DesignMatrix, priors: Priors,
               config: ChainConfig, effects_kind: str = "dp",
               beta_update: str | None = None, config_hash: str = "",
               stop_after: int | None = None):
    """Run the configured number of chains and pool them.

    Returns (PosteriorDraws, Diagnostics).  Monitored scalars for the
    convergence diagnostic: every fixed-effect component, the log mass and
    the cluster count (clustered effects only), and the log cell mean of a
    seed-chosen subset of sample uniques.
    """
    mode = resolve_mode(table, design, priors, effects_kind, beta_update)
    f = table.counts_for(design.cells)
    uniques = table.sample_uniques()
    unique_pos = np.searchsorted(design.cells, uniques)
    q = design.n_columns

    args = [(cid, f, design.matrix, table.pi, unique_pos, priors, config,
             mode, config_hash, stop_after) for cid in range(config.n_chains)]
    if config.n_workers > 1:
        with ProcessPoolExecutor(max_workers=config.n_workers) as pool:
            results = list(pool.map(_chain_worker, args))
    else:
        results = [_chain_worker(a) for a in args]
    if any(r is None for r in results):
        return None, None  # stopped early for checkpointing

    draws = PosteriorDraws(
        unique_cells=uniques,
        pi=table.pi,
        beta=np.stack([r["beta"] for r in results]),
        mass=np.stack([r["mass"] for r in results]),
        n_clusters=np.stack([r["c"] for r in results]),
        lambda_uniques=np.stack([r["lam"] for r in results]),
        cluster_effects=[r["omega"] for r in results]
        if config.keep_cluster_effects and mode.effects == "dp" else None,
    )

    rhat: dict[str, float] = {}
    if config.n_chains >= 2 and config.n_kept >= 10:
        for j in range(q):
            rhat[f"beta[{j}]"] = gelman_rubin(draws.beta[:, :, j])
        if mode.effects == "dp":
            rhat["log_mass"] = gelman_rubin(np.log(draws.mass))
            rhat["n_clusters"] = gelman_rubin(draws.n_clusters.astype(float))
        mon_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(
            config.n_chains + 1)[-1])
        n_mon = min(config.n_monitored_uniques, len(uniques))
        mon_idx = np.sort(mon_rng.choice(len(uniques), size=n_mon, replace=False)) \
            if n_mon else np.empty(0, dtype=int)
        for i in mon_idx:
            rhat[f"log_lambda[{uniques[i]}]"] = gelman_rubin(
                np.log(draws.lambda_uniques[:, :, i]))
    converged = all(v < config.rhat_threshold for v in rhat.values()) if rhat else True
    diag = Diagnostics(
        rhat=rhat,
        converged=converged,
        acceptance=np.array([r["acceptance"] for r in results]),
        epsilon=np.array([r["epsilon"] for r in results]),
        rhat_threshold=config.rhat_threshold,
    )
    return draws, diag


def parametric_effect_posterior(table: ContingencyTable, design: DesignMatrix,
                                state: ModelState, priors: Priors):
    """Per-cell conjugate posterior parameters (shape, rate) of the
    multiplicative effects in the unclustered variant."""
    f = table.counts_for(design.cells)
    xi = np.exp(design.matrix @ state.beta) if design.n_columns else np.ones(design.n_rows)
    return priors.base_shape + f, priors.base_rate + table.pi * xi
