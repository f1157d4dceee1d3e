"""Disclosure risk estimation for categorical microdata.

Fits Poisson log-linear models with multiplicative random effects, either
parametric (independent Gamma) or clustered through a Dirichlet-process
prior, and turns posterior draws of the cell means into global and
per-cell re-identification risk measures with full posterior uncertainty.
"""

__version__ = "0.1.0"

from .chains import (ChainConfig, Diagnostics, FitError, IPFResult,
                     PosteriorDraws, gelman_rubin, ipf_fit, laplace_fit,
                     run_chains, smmala_step)
from .design import (ALL_TWO_WAY, INDEPENDENCE, OVERALL_MEAN, DesignError,
                     DesignMatrix, DesignSpec, build_design, linear_predictor)
from .effects import (ClusterStats, conditional_cell_loglik, gibbs_reallocate,
                      marginal_cell_loglik, partition_log_prior,
                      redraw_cluster_effects, sample_mass)
from .model import (ModelState, Priors, grad_fisher_beta, log_base_measure,
                    log_likelihood, log_prior_beta)
from .risk import (RiskReport, Summary, build_risk_report, calibration_bins,
                   cell_risk_closed_form, global_full_bayes,
                   global_star_estimates, sample_population_counts, true_risks)
from .synth import (GeneratorConfig, SampleDraw, SyntheticPopulation,
                    benchmark_generator_config, draw_sample, synth_population)
from .table import (CellIndex, ContingencyTable, KeySchema, TableError,
                    ingest_microdata, read_microdata,
                    read_structural_zero_patterns, read_tabulated)

__all__ = [
    "__version__",
    "ALL_TWO_WAY", "INDEPENDENCE", "OVERALL_MEAN",
    "CellIndex", "ChainConfig", "ClusterStats", "ContingencyTable",
    "DesignError", "DesignMatrix", "DesignSpec", "Diagnostics", "FitError",
    "GeneratorConfig", "IPFResult", "KeySchema", "ModelState",
    "PosteriorDraws", "Priors", "RiskReport", "SampleDraw", "Summary",
    "SyntheticPopulation", "TableError",
    "benchmark_generator_config", "build_design", "build_risk_report",
    "calibration_bins", "cell_risk_closed_form", "conditional_cell_loglik",
    "draw_sample", "gelman_rubin", "gibbs_reallocate", "global_full_bayes",
    "global_star_estimates", "grad_fisher_beta", "ingest_microdata",
    "ipf_fit", "laplace_fit", "linear_predictor", "log_base_measure",
    "log_likelihood", "log_prior_beta", "marginal_cell_loglik",
    "partition_log_prior", "read_microdata", "read_structural_zero_patterns",
    "read_tabulated", "redraw_cluster_effects", "run_chains",
    "sample_mass", "sample_population_counts", "smmala_step",
    "synth_population", "true_risks",
]
