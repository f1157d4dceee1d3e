"""Disclosure risk measures over sample-unique cells.

Two global measures are estimated, each summed over the cells with a
sample frequency of one:

  r1: how many of those cells hold a population unique (an exact,
      certain re-identification);
  r2: the expected number of correct matches when each sample unique is
      linked to a random individual in its population cell (the sum of
      1/F over sample uniques).

Given a cell mean, both have closed conditional forms ("star" variants):
the probability that the rest of the population adds nothing to the cell,
and the expected reciprocal of the population count.  The fully Bayesian
variants additionally draw the unobserved population counts, so their
posterior spread includes that extra uncertainty; their variance is
estimated empirically from the draws rather than through any per-cell
independence shortcut, because posterior cell means are correlated.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .table import ContingencyTable, TableError

PERCENTILES = (2.5, 5.0, 50.0, 95.0, 97.5)
_SMALL_RATE = 1e-8


def cell_risk_closed_form(lam, pi: float):
    """Closed-form per-cell risks (r1_star, r2_star) for cells with one
    sampled record.

    With t = (1-pi)*lam: r1_star = exp(-t), r2_star = (1 - exp(-t))/t,
    both tending to 1 as t -> 0 (series used below 1e-8).
    """
    if not 0.0 < pi < 1.0:
        raise ValueError(f"sampling fraction must be in (0,1), got {pi}")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("cell means must be nonnegative")
    t = (1.0 - pi) * lam
    r1 = np.exp(-t)
    small = t < _SMALL_RATE
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(small, 1.0 - t / 2.0, -np.expm1(-t) / np.where(small, 1.0, t))
    if lam.ndim == 0:
        return float(r1), float(r2)
    return r1, r2


def sample_population_counts(lam, f, pi: float, rng):
    """Draw population counts consistent with the observed sample: the
    observed records plus an unsampled Poisson((1-pi)*lam) remainder."""
    lam = np.asarray(lam, dtype=np.float64)
    f = np.asarray(f)
    return f + rng.poisson((1.0 - pi) * lam)


def nearest_rank_percentile(sorted_values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile on pre-sorted values."""
    n = len(sorted_values)
    idx = max(int(math.ceil(p / 100.0 * n)) - 1, 0)
    return float(sorted_values[min(idx, n - 1)])


@dataclass
class Summary:
    """Posterior summary of one scalar: mean, spread, and percentiles of
    the per-draw values."""

    mean: float
    sd: float
    percentiles: dict[float, float]
    n_draws: int

    @classmethod
    def from_draws(cls, values: np.ndarray) -> "Summary":
        values = np.asarray(values, dtype=np.float64)
        n = len(values)
        sd = float(values.std(ddof=1)) if n > 1 else math.nan
        srt = np.sort(values)
        pct = {p: nearest_rank_percentile(srt, p) for p in PERCENTILES}
        return cls(mean=float(values.mean()), sd=sd, percentiles=pct, n_draws=n)

    def interval(self, lo=2.5, hi=97.5):
        return self.percentiles[lo], self.percentiles[hi]


def star_risk_draws(lambda_draws: np.ndarray, pi: float):
    """Per-draw global closed-form risks: row sums of the per-cell values
    over the sample uniques.  ``lambda_draws`` has shape (draws, uniques)."""
    r1k, r2k = cell_risk_closed_form(lambda_draws, pi)
    return r1k.sum(axis=1), r2k.sum(axis=1)


def global_star_estimates(lambda_draws: np.ndarray, pi: float):
    """Summaries of the closed-form global risks plus per-cell posterior
    means.  Returns (r1_summary, r2_summary, percell_r1, percell_r2)."""
    if lambda_draws.ndim != 2 or lambda_draws.shape[0] == 0:
        raise ValueError("need a nonempty (draws, uniques) array")
    r1k, r2k = cell_risk_closed_form(lambda_draws, pi)
    return (Summary.from_draws(r1k.sum(axis=1)),
            Summary.from_draws(r2k.sum(axis=1)),
            r1k.mean(axis=0), r2k.mean(axis=0))


def global_full_bayes(lambda_draws: np.ndarray, pi: float, rng):
    """Fully Bayesian global risks: per posterior draw, the population
    counts of the sample uniques are sampled and the realized measures
    accumulated.  Returns (r1_summary, r2_summary, r1_draws, r2_draws)."""
    if lambda_draws.ndim != 2 or lambda_draws.shape[0] == 0:
        raise ValueError("need a nonempty (draws, uniques) array")
    t = (1.0 - pi) * lambda_draws
    remainder = rng.poisson(t)
    F = 1 + remainder
    r1_draws = (F == 1).sum(axis=1).astype(np.float64)
    r2_draws = (1.0 / F).sum(axis=1)
    return (Summary.from_draws(r1_draws), Summary.from_draws(r2_draws),
            r1_draws, r2_draws)


def r1_variance_conditional_form(lambda_draws: np.ndarray, pi: float) -> float:
    """Variance of r1 under the per-cell independence shortcut: sum of
    p(1-p) over cells with p the posterior-mean per-cell probability.
    Reported as a diagnostic; it matches the empirical posterior variance
    only when cell means are independent across cells."""
    r1k, _ = cell_risk_closed_form(lambda_draws, pi)
    p = r1k.mean(axis=0)
    return float(np.sum(p * (1.0 - p)))


def true_risks(table: ContingencyTable):
    """Definitional global risks computed from known population counts."""
    if table.population_counts is None:
        raise TableError("true risks need population counts")
    uniques = table.sample_uniques()
    F = table.population_counts_for(uniques)
    if np.any(F < 1):
        raise TableError("sample unique with population count below 1")
    r1 = int(np.sum(F == 1))
    r2 = float(np.sum(1.0 / F))
    return r1, r2


@dataclass
class CalibrationBin:
    lo: float
    hi: float
    count: int
    mean_estimate: float
    mean_observed: float


def calibration_bins(estimates: np.ndarray, observed: np.ndarray,
                     n_bins: int = 10) -> list[CalibrationBin]:
    """Group cells into equal-width intervals of the estimated risk and
    average both the estimate and the observed quantity per interval.

    ``observed`` is the population-unique indicator for the exact-match
    measure, or 1/F for the expected-match measure.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if estimates.shape != observed.shape:
        raise ValueError("estimates and observed values must align")
    if len(estimates) == 0:
        return []
    lo, hi = float(estimates.min()), float(estimates.max())
    width = (hi - lo) / n_bins
    if width == 0.0:
        idx = np.zeros(len(estimates), dtype=int)
    else:
        idx = np.minimum(((estimates - lo) / width).astype(int), n_bins - 1)
    bins = []
    for i in range(n_bins):
        members = idx == i
        cnt = int(members.sum())
        if cnt == 0:
            continue
        bins.append(CalibrationBin(
            lo=lo + i * width, hi=lo + (i + 1) * width, count=cnt,
            mean_estimate=float(estimates[members].mean()),
            mean_observed=float(observed[members].mean())))
    return bins


@dataclass
class RiskReport:
    """Everything a run publishes about the risk of one table."""

    model_label: str
    pi: float
    n_sample: int
    n_cells: int
    n_active: int
    n_uniques: int
    r1_star: Summary
    r2_star: Summary
    r1: Summary | None
    r2: Summary | None
    unique_cells: np.ndarray
    percell_r1_star: np.ndarray
    percell_r2_star: np.ndarray
    var_r1_conditional_form: float | None = None
    true_r1: int | None = None
    true_r2: float | None = None
    calibration_r1: list[CalibrationBin] | None = None
    calibration_r2: list[CalibrationBin] | None = None
    metadata: dict = field(default_factory=dict)


def build_risk_report(lambda_draws: np.ndarray, unique_cells: np.ndarray,
                      table: ContingencyTable, rng, model_label: str,
                      metadata: dict | None = None,
                      full_bayes: bool = True) -> RiskReport:
    """Assemble the report from pooled posterior draws of the unique-cell
    means.  Population counts, when the table has them, add true values
    and calibration diagnostics; they are never visible to the draws."""
    r1s, r2s, pc1, pc2 = global_star_estimates(lambda_draws, table.pi)
    r1fb = r2fb = None
    var_cond = None
    if full_bayes:
        r1fb, r2fb, _, _ = global_full_bayes(lambda_draws, table.pi, rng)
        var_cond = r1_variance_conditional_form(lambda_draws, table.pi)
    report = RiskReport(
        model_label=model_label,
        pi=table.pi,
        n_sample=table.n,
        n_cells=table.n_cells,
        n_active=table.n_active,
        n_uniques=len(unique_cells),
        r1_star=r1s, r2_star=r2s, r1=r1fb, r2=r2fb,
        unique_cells=np.asarray(unique_cells),
        percell_r1_star=pc1, percell_r2_star=pc2,
        var_r1_conditional_form=var_cond,
        metadata=dict(metadata or {}),
    )
    if table.population_counts is not None and len(unique_cells):
        tr1, tr2 = true_risks(table)
        report.true_r1, report.true_r2 = tr1, tr2
        F = table.population_counts_for(report.unique_cells)
        report.calibration_r1 = calibration_bins(pc1, (F == 1).astype(float))
        report.calibration_r2 = calibration_bins(pc2, 1.0 / F)
    return report


# ---------------------------------------------------------------------------
# Serialization


def _fmt(value):
    if isinstance(value, float):
        if math.isnan(value):
            return "-"
        return repr(value)
    return str(value)


def report_kv_lines(report: RiskReport) -> list[str]:
    """Flat machine-readable key/value lines, deterministically ordered."""
    rows: list[tuple[str, object]] = [
        ("model", report.model_label),
        ("pi", report.pi),
        ("n_sample", report.n_sample),
        ("n_cells", report.n_cells),
        ("n_active", report.n_active),
        ("n_uniques", report.n_uniques),
    ]
    for name, summ in (("r1_star", report.r1_star), ("r2_star", report.r2_star),
                       ("r1", report.r1), ("r2", report.r2)):
        if summ is None:
            continue
        rows.append((f"{name}.mean", summ.mean))
        rows.append((f"{name}.sd", summ.sd))
        for p in PERCENTILES:
            rows.append((f"{name}.p{p:g}", summ.percentiles[p]))
        rows.append((f"{name}.n_draws", summ.n_draws))
    if report.var_r1_conditional_form is not None:
        rows.append(("diagnostic.var_r1_conditional_form",
                     report.var_r1_conditional_form))
    if report.true_r1 is not None:
        rows.append(("true.r1", report.true_r1))
        rows.append(("true.r2", report.true_r2))
    for key in sorted(report.metadata):
        rows.append((f"meta.{key}", report.metadata[key]))
    return [f"{k} = {_fmt(v)}" for k, v in rows]


def write_report_kv(report: RiskReport, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(report_kv_lines(report)) + "\n")


def report_text(report: RiskReport) -> str:
    """Human-readable report."""
    lines = []
    lines.append(f"Disclosure risk report - model {report.model_label}")
    lines.append("=" * 60)
    lines.append(f"records sampled      : {report.n_sample}")
    lines.append(f"cells (active/total) : {report.n_active}/{report.n_cells}")
    lines.append(f"sample uniques       : {report.n_uniques}")
    lines.append(f"sampling fraction    : {report.pi}")
    lines.append("")
    header = f"{'measure':<10}{'mean':>12}{'sd':>10}" + "".join(
        f"{'p' + format(p, 'g'):>10}" for p in PERCENTILES)
    lines.append(header)
    lines.append("-" * len(header))

    def row(name, summ):
        if summ is None:
            return
        sd = "-" if math.isnan(summ.sd) else f"{summ.sd:.2f}"
        cells = "".join(f"{summ.percentiles[p]:>10.2f}" for p in PERCENTILES)
        lines.append(f"{name:<10}{summ.mean:>12.2f}{sd:>10}{cells}")

    row("r1*", report.r1_star)
    row("r2*", report.r2_star)
    row("r1", report.r1)
    row("r2", report.r2)
    if report.true_r1 is not None:
        lines.append("")
        lines.append(f"true r1 = {report.true_r1}, true r2 = {report.true_r2:.1f}")
    if report.metadata:
        lines.append("")
        lines.append("run metadata:")
        for key in sorted(report.metadata):
            lines.append(f"  {key} = {_fmt(report.metadata[key])}")
    return "\n".join(lines) + "\n"


def write_report_text(report: RiskReport, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report_text(report))


def write_percell_csv(report: RiskReport, path, table: ContingencyTable | None = None):
    """Per-cell risks of the sample uniques; adds the population count
    column in benchmark mode."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ["cell", "r1_star", "r2_star"]
        pop = None
        if table is not None and table.population_counts is not None:
            header.append("pop_count")
            pop = table.population_counts_for(report.unique_cells)
        writer.writerow(header)
        for i, cell in enumerate(report.unique_cells):
            rec = [int(cell), repr(float(report.percell_r1_star[i])),
                   repr(float(report.percell_r2_star[i]))]
            if pop is not None:
                rec.append(int(pop[i]))
            writer.writerow(rec)


def write_calibration_csv(bins: list[CalibrationBin], path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lo", "hi", "count", "mean_estimate", "mean_observed"])
        for b in bins:
            writer.writerow([repr(b.lo), repr(b.hi), b.count,
                             repr(b.mean_estimate), repr(b.mean_observed)])
