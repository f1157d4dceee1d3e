import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad

from sdcrisk.effects import (ClusterStats, audit_cluster_stats,
                             canonical_labels, cluster_marginal_loglik,
                             compute_cluster_stats, conditional_cell_loglik,
                             draw_cluster_effects, gibbs_reallocate,
                             marginal_cell_loglik, partition_log_prior,
                             reallocate_sweep, redraw_cluster_effects,
                             sample_mass)
from sdcrisk.model import Priors
from sdcrisk.oracle import enumerate_partitions, partition_sizes


class TestMarginal:
    def test_zero_count_closed_form(self):
        for a, b, mu in ((1.0, 0.1, 2.0), (3.5, 2.0, 0.7)):
            assert marginal_cell_loglik(0, mu, a, b) == pytest.approx(
                a * math.log(b / (b + mu)), rel=1e-12)

    def test_unit_parameters(self):
        assert marginal_cell_loglik(1, 1.0, 1.0, 1.0) == pytest.approx(
            math.log(0.25), rel=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_quadrature(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0.3, 4.0)
        b = rng.uniform(0.05, 3.0)
        mu = rng.uniform(0.01, 15.0)
        f = int(rng.integers(0, 25))
        target, _ = quad(
            lambda w: stats.poisson.pmf(f, mu * w) * stats.gamma.pdf(w, a, scale=1 / b),
            0, np.inf, limit=300)
        assert math.exp(marginal_cell_loglik(f, mu, a, b)) == pytest.approx(
            target, abs=1e-8)

    def test_degenerate_exposure(self):
        assert marginal_cell_loglik(0, 0.0, 1.0, 0.1) == 0.0
        assert marginal_cell_loglik(2, 0.0, 1.0, 0.1) == -math.inf

    def test_mass_sums_to_one(self):
        a, b, mu = 1.4, 0.3, 2.5
        total = sum(math.exp(marginal_cell_loglik(f, mu, a, b))
                    for f in range(400))
        assert total == pytest.approx(1.0, abs=1e-10)


class TestConditional:
    def test_reduces_to_marginal_on_empty_cluster(self):
        assert conditional_cell_loglik(3, 1.2, 0, 0.0, 1.0, 0.1) == \
            marginal_cell_loglik(3, 1.2, 1.0, 0.1)

    def test_joint_over_marginal_ratio(self):
        rng = np.random.default_rng(4)
        a, b = 1.0, 0.1
        f = rng.integers(0, 6, size=5)
        mu = rng.uniform(0.2, 3.0, size=5)
        joint_without = cluster_marginal_loglik(f[:-1], mu[:-1], a, b)
        joint_with = cluster_marginal_loglik(f, mu, a, b)
        cond = conditional_cell_loglik(int(f[-1]), float(mu[-1]),
                                       int(f[:-1].sum()), float(mu[:-1].sum()),
                                       a, b)
        assert cond == pytest.approx(joint_with - joint_without, rel=1e-12)

    def test_rich_cluster_shifts_mass_to_large_counts(self):
        # a cluster with many counts and little exposure predicts larger
        # counts: the upper-tail mass beyond a threshold grows with the sum
        a, b, mu = 1.0, 0.1, 1.0

        def tail(sum_f, threshold=12):
            low = sum(math.exp(conditional_cell_loglik(f, mu, sum_f, 0.5, a, b))
                      for f in range(threshold))
            return 1.0 - low

        tails = [tail(sum_f) for sum_f in (0, 10, 50)]
        assert tails[0] < tails[1] < tails[2]

    def test_telescoping_product_equals_cluster_joint(self):
        a, b = 1.3, 0.4
        f = np.array([2, 0, 5])
        mu = np.array([1.0, 0.5, 2.0])
        running = 0.0
        for i in range(3):
            running += conditional_cell_loglik(
                int(f[i]), float(mu[i]), int(f[:i].sum()), float(mu[:i].sum()),
                a, b)
        assert running == pytest.approx(cluster_marginal_loglik(f, mu, a, b),
                                        rel=1e-12)


class TestReallocation:
    def test_huge_mass_opens_new_cluster_per_cell(self):
        rng = np.random.default_rng(0)
        f = np.array([1, 2, 0, 3])
        mu = np.ones(4)
        alloc = np.zeros(4, dtype=np.int64)
        alloc, stats_ = reallocate_sweep(f, mu, alloc, 1e9, 1.0, 0.1, rng)
        assert stats_.n_clusters == 4

    def test_single_cell(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            alloc, stats_ = reallocate_sweep(
                np.array([2]), np.array([0.7]), np.zeros(1, dtype=np.int64),
                1.0, 1.0, 0.1, rng)
            assert list(alloc) == [0]
            assert stats_.n_clusters == 1

    def test_labels_contiguous_and_stats_consistent(self):
        rng = np.random.default_rng(8)
        f = rng.integers(0, 5, size=30)
        mu = rng.uniform(0.1, 3.0, size=30)
        alloc = np.zeros(30, dtype=np.int64)
        for _ in range(25):
            alloc, stats_ = reallocate_sweep(f, mu, alloc, 1.0, 1.0, 0.1, rng)
            c = stats_.n_clusters
            assert set(alloc) == set(range(c))
            assert np.all(stats_.sizes >= 1)
            assert stats_.sizes.sum() == 30
            audit_cluster_stats(f, mu, alloc, stats_)

    def test_empirical_partition_distribution_small(self):
        # light version of the exactness check (the acceptance suite runs
        # the full-length one)
        from sdcrisk.oracle import exact_partition_posterior
        f = np.array([0, 1, 2])
        mu = np.ones(3)
        parts, probs = exact_partition_posterior(f, mu, 1.0, 1.0, 0.1)
        exact = dict(zip(parts, probs))
        rng = np.random.default_rng(2)
        alloc = np.zeros(3, dtype=np.int64)
        counts = {p: 0 for p in parts}
        n_sweeps = 30_000
        for _ in range(n_sweeps):
            alloc, _ = reallocate_sweep(f, mu, alloc, 1.0, 1.0, 0.1, rng)
            counts[canonical_labels(alloc)] += 1
        for p in parts:
            assert counts[p] / n_sweeps == pytest.approx(exact[p], abs=0.015)

    def test_scan_order_does_not_change_stationary_distribution(self):
        from sdcrisk.oracle import exact_partition_posterior
        f = np.array([3, 1, 0])
        mu = np.array([0.5, 1.0, 2.0])
        parts, probs = exact_partition_posterior(f, mu, 0.7, 1.0, 0.1)
        exact = dict(zip(parts, probs))
        for order in ("ascending", "random"):
            rng = np.random.default_rng(9)
            alloc = np.zeros(3, dtype=np.int64)
            counts = {p: 0 for p in parts}
            n_sweeps = 30_000
            for _ in range(n_sweeps):
                alloc, _ = reallocate_sweep(f, mu, alloc, 0.7, 1.0, 0.1, rng,
                                            scan_order=order)
                counts[canonical_labels(alloc)] += 1
            for p in parts:
                assert counts[p] / n_sweeps == pytest.approx(exact[p], abs=0.015)

    def test_gibbs_reallocate_wrapper(self):
        from sdcrisk.design import INDEPENDENCE, DesignSpec, build_design
        from sdcrisk.model import ModelState
        from sdcrisk.table import ContingencyTable, KeySchema
        schema = KeySchema((("a", 2), ("b", 3)))
        t = ContingencyTable(schema=schema, counts={0: 2, 4: 1}, pi=0.2)
        d = build_design(DesignSpec(INDEPENDENCE, schema), t)
        state = ModelState(np.zeros(3), np.zeros(6, dtype=np.int64),
                           np.ones(1), 1.0)
        rng = np.random.default_rng(3)
        new = gibbs_reallocate(t, d, state, Priors(), rng)
        new.validate()
        assert len(new.alloc) == 6


class TestEffectRedraw:
    def test_prior_recovered_without_data(self):
        stats_ = ClusterStats(sizes=np.array([1]), count_sums=np.array([0]),
                              rate_sums=np.array([0.0]))
        rng = np.random.default_rng(1)
        draws = np.array([draw_cluster_effects(stats_, Priors(), rng)[0]
                          for _ in range(20_000)])
        # prior Gamma(1, 0.1): mean 10, sd 10
        assert draws.mean() == pytest.approx(10.0, abs=3 * 10 / math.sqrt(20_000))

    def test_posterior_moments(self):
        a, b = 1.0, 0.1
        stats_ = ClusterStats(sizes=np.array([3]), count_sums=np.array([7]),
                              rate_sums=np.array([2.4]))
        rng = np.random.default_rng(2)
        n = 40_000
        draws = rng.gamma(a + 7, 1.0 / (b + 2.4), n)
        redraws = np.array([draw_cluster_effects(stats_, Priors(), rng)[0]
                            for _ in range(n)])
        target_mean = (a + 7) / (b + 2.4)
        se = np.sqrt((a + 7)) / (b + 2.4) / math.sqrt(n)
        assert redraws.mean() == pytest.approx(target_mean, abs=3 * se)
        assert redraws.var() == pytest.approx(draws.var(), rel=0.1)

    def test_conjugacy_identity_on_grid(self):
        # the conditional density is proportional to prior times cluster
        # likelihood pointwise
        a, b = 1.0, 0.1
        f = np.array([2, 0, 1])
        mu = np.array([0.8, 1.5, 0.3])
        grid = np.linspace(0.05, 8.0, 40)
        post = stats.gamma.logpdf(grid, a + f.sum(), scale=1 / (b + mu.sum()))
        raw = (stats.gamma.logpdf(grid, a, scale=1 / b)
               + np.array([np.sum(stats.poisson.logpmf(f, mu * w)) for w in grid]))
        diff = post - raw
        assert np.allclose(diff, diff[0], atol=1e-10)

    def test_redraw_wrapper_holds_allocation(self):
        from sdcrisk.design import OVERALL_MEAN, DesignSpec, build_design
        from sdcrisk.model import ModelState
        from sdcrisk.table import ContingencyTable, KeySchema
        schema = KeySchema((("a", 3),))
        t = ContingencyTable(schema=schema, counts={0: 1}, pi=0.2)
        d = build_design(DesignSpec(OVERALL_MEAN, schema), t)
        state = ModelState(np.empty(0), np.array([0, 1, 0]), np.ones(2), 1.0)
        new = redraw_cluster_effects(t, d, state, Priors(), np.random.default_rng(0))
        assert np.array_equal(new.alloc, state.alloc)
        assert new.omega.shape == (2,)
        assert not np.array_equal(new.omega, state.omega)


class TestMassUpdate:
    def test_always_positive(self):
        rng = np.random.default_rng(0)
        priors = Priors()
        m = 1.0
        for _ in range(500):
            m = sample_mass(3, 50, m, priors, rng)
            assert m > 0

    def test_prior_recovery_without_cells(self):
        rng = np.random.default_rng(1)
        priors = Priors()
        draws = np.array([sample_mass(1, 0, 1.0, priors, rng)
                          for _ in range(20_000)])
        assert draws.mean() == pytest.approx(10.0, abs=3 * 10 / math.sqrt(20_000))

    def test_requires_cluster(self):
        with pytest.raises(ValueError):
            sample_mass(0, 10, 1.0, Priors(), np.random.default_rng(0))


class TestPartitionPrior:
    def test_three_cells_unit_mass(self):
        sizes_and_masses = {
            (3,): 1 / 3,
            (2, 1): 1 / 6,
            (1, 1, 1): 1 / 6,
        }
        for sizes, target in sizes_and_masses.items():
            assert math.exp(partition_log_prior(np.array(sizes), 1.0, 3)) == \
                pytest.approx(target, rel=1e-12)

    @pytest.mark.parametrize("K,m", [(3, 1.0), (4, 0.5), (5, 2.0)])
    def test_normalizes_over_all_partitions(self, K, m):
        total = sum(
            math.exp(partition_log_prior(partition_sizes(p), m, K))
            for p in enumerate_partitions(K))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_all_singletons_mass(self):
        for m, K in ((0.3, 4), (2.0, 6)):
            expected = (math.lgamma(m) + K * math.log(m) - math.lgamma(m + K))
            assert partition_log_prior(np.ones(K, dtype=int), m, K) == \
                pytest.approx(expected, rel=1e-12)

    def test_rejects_inconsistent_sizes(self):
        with pytest.raises(ValueError):
            partition_log_prior(np.array([2, 2]), 1.0, 3)


class TestClusterStats:
    def test_recompute_matches_incremental_path(self):
        rng = np.random.default_rng(5)
        f = rng.integers(0, 4, 20)
        mu = rng.uniform(0.1, 2.0, 20)
        alloc = rng.integers(0, 3, 20)
        alloc[:3] = [0, 1, 2]
        stats_ = compute_cluster_stats(f, mu, alloc)
        assert stats_.sizes.sum() == 20
        assert stats_.count_sums.sum() == f.sum()
        assert stats_.rate_sums.sum() == pytest.approx(mu.sum(), rel=1e-12)
        audit_cluster_stats(f, mu, alloc, stats_)

    def test_audit_detects_corruption(self):
        f = np.array([1, 2])
        mu = np.array([0.5, 0.5])
        alloc = np.array([0, 0])
        stats_ = compute_cluster_stats(f, mu, alloc)
        stats_.count_sums[0] += 1
        with pytest.raises(RuntimeError):
            audit_cluster_stats(f, mu, alloc, stats_)

    def test_canonical_labels(self):
        assert canonical_labels(np.array([5, 2, 5, 0])) == (0, 1, 0, 2)
