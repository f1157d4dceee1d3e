"""Poisson likelihood with log-linear means, its derivatives in the fixed
effects, and the prior specifications.

Cell means factor as lambda_k = xi_k * omega_{alloc(k)}: a fixed-effects
part xi_k = exp(w_k . beta) from the design and a multiplicative random
effect shared by every cell allocated to the same cluster.  Sample counts
are Poisson with mean pi * lambda_k.  Sampling-zero cells stay in the
likelihood with f_k = 0; structural zeros are excluded entirely (they are
simply absent from the active-cell arrays).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .design import DesignMatrix, linear_predictor
from .table import ContingencyTable


@dataclass(frozen=True)
class Priors:
    """Hyperparameters: Gaussian on fixed effects, Gamma base measure for
    the multiplicative random effects, Gamma on the clustering mass."""

    beta_variance: float = 10.0
    base_shape: float = 1.0  # a
    base_rate: float = 0.1   # b
    mass_shape: float = 1.0
    mass_rate: float = 0.1

    def __post_init__(self):
        for name in ("beta_variance", "base_shape", "base_rate",
                     "mass_shape", "mass_rate"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")


@dataclass
class ModelState:
    """One sampler state: fixed effects, cluster allocations of the active
    cells, per-cluster multiplicative effects, and the clustering mass."""

    beta: np.ndarray          # (q,)
    alloc: np.ndarray         # (K_eff,) int cluster labels, contiguous 0..c-1
    omega: np.ndarray         # (c,) positive per-cluster effects
    mass: float

    def copy(self) -> "ModelState":
        return ModelState(self.beta.copy(), self.alloc.copy(),
                          self.omega.copy(), self.mass)

    @property
    def n_clusters(self) -> int:
        return len(self.omega)

    def validate(self):
        c = len(self.omega)
        if self.alloc.size:
            labels = np.unique(self.alloc)
            if labels[0] != 0 or labels[-1] != c - 1 or len(labels) != c:
                raise ValueError("cluster labels not contiguous and nonempty")
        if not np.all(self.omega > 0):
            raise ValueError("cluster effects must be positive")
        if not self.mass > 0:
            raise ValueError("mass must be positive")


def cell_means(xi: np.ndarray, state: ModelState) -> np.ndarray:
    """lambda_k = xi_k * omega_{alloc(k)} over the active cells."""
    return xi * state.omega[state.alloc]


def poisson_loglik(f: np.ndarray, mean: np.ndarray) -> float:
    """Sum of Poisson log-pmfs; log f! via the log-Gamma function.

    Cells with mean exactly 0 contribute 0 when f = 0 and -inf otherwise.
    """
    f = np.asarray(f, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    out = -mean - gammaln(f + 1.0)
    pos = f > 0
    with np.errstate(divide="ignore"):
        out[pos] += f[pos] * np.log(mean[pos])
    return float(np.sum(out))


def log_likelihood(table: ContingencyTable, design: DesignMatrix,
                   state: ModelState) -> float:
    """Poisson log-likelihood of the sample counts given the state."""
    f = table.counts_for(design.cells)
    xi = linear_predictor(design, state.beta)
    return poisson_loglik(f, table.pi * cell_means(xi, state))


def log_prior_beta(beta: np.ndarray, variance: float = 10.0) -> float:
    """Independent centered Gaussian log-density, one variance for all
    components."""
    beta = np.asarray(beta, dtype=np.float64)
    q = beta.size
    return float(-0.5 * q * np.log(2.0 * np.pi * variance)
                 - 0.5 * np.dot(beta, beta) / variance)


def log_base_measure(phi, a: float = 1.0, b: float = 0.1):
    """Log-density of the additive effect phi = log(omega) when omega is
    Gamma(a, b) with rate b; change of variables gives
    a*log(b) - lgamma(a) + a*phi - b*exp(phi)."""
    phi = np.asarray(phi, dtype=np.float64)
    out = a * np.log(b) - gammaln(a) + a * phi - b * np.exp(phi)
    return float(out) if out.ndim == 0 else out


def log_posterior_beta(table: ContingencyTable, design: DesignMatrix,
                       state: ModelState, priors: Priors) -> float:
    """Conditional log-posterior of beta given everything else (up to the
    terms constant in beta, which are kept for convenience)."""
    return (log_likelihood(table, design, state)
            + log_prior_beta(state.beta, priors.beta_variance))


def grad_fisher_beta(table: ContingencyTable, design: DesignMatrix,
                     state: ModelState, priors: Priors):
    """Gradient of the conditional log-posterior of beta and the metric
    (expected information plus prior curvature).

    gradient = W'(f - pi*lambda) - beta/v
    metric   = W' diag(pi*lambda) W + I/v

    For the Poisson log link the expected information equals the negative
    Hessian exactly, so the metric is also the negative Hessian of the
    log posterior.  Returns empty arrays when the design has no columns.
    """
    q = design.n_columns
    if q == 0:
        return np.empty(0), np.empty((0, 0))
    f = table.counts_for(design.cells).astype(np.float64)
    xi = linear_predictor(design, state.beta)
    mu = table.pi * cell_means(xi, state)
    W = design.matrix
    grad = W.T @ (f - mu) - state.beta / priors.beta_variance
    metric = (W.T @ W.multiply(mu[:, None])).toarray()
    metric[np.diag_indices(q)] += 1.0 / priors.beta_variance
    return np.asarray(grad), metric


def metric_cholesky(metric: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; failure reported with the offending pivot."""
    try:
        return np.linalg.cholesky(metric)
    except np.linalg.LinAlgError:
        diag = np.diag(metric)
        pivot = int(np.argmin(diag))
        raise np.linalg.LinAlgError(
            f"metric not positive definite (worst pivot {pivot}, "
            f"diagonal {diag[pivot]:.3e})"
        ) from None
