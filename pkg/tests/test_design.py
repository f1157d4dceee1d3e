import numpy as np
import pytest

from sdcrisk.design import (ALL_TWO_WAY, INDEPENDENCE, OVERALL_MEAN,
                            DesignError, DesignSpec, build_design,
                            design_row_columns, linear_predictor)
from sdcrisk.table import ContingencyTable, KeySchema


def empty_table(cards, pi=0.1):
    schema = KeySchema(tuple((f"v{i}", c) for i, c in enumerate(cards)))
    return ContingencyTable(schema=schema, counts={}, pi=pi)


def dense_rows(spec, cells):
    """Dense oracle: assemble rows one cell at a time from scratch."""
    out = np.zeros((len(cells), spec.n_columns))
    for i, flat in enumerate(cells):
        cols = design_row_columns(spec, spec.schema.decode(flat))
        out[i, cols] = 1.0
    return out


class TestColumnCounts:
    def test_small(self):
        t = empty_table((2, 2))
        assert DesignSpec(OVERALL_MEAN, t.schema).n_columns == 0
        assert DesignSpec(INDEPENDENCE, t.schema).n_columns == 2
        assert DesignSpec(ALL_TWO_WAY, t.schema).n_columns == 3

    def test_census_style_main_effects(self):
        t = empty_table((10, 10, 2, 6, 5, 3, 5))
        spec = DesignSpec(INDEPENDENCE, t.schema)
        assert spec.n_columns == 34
        d = build_design(spec, t)
        assert d.matrix.shape == (90_000, 34)

    def test_q_overflow_rejected(self):
        t = empty_table((10, 10, 2, 6, 5, 3, 5))
        with pytest.raises(DesignError, match="q="):
            build_design(DesignSpec(ALL_TWO_WAY, t.schema), t, max_columns=100)


class TestRows:
    def test_independence_dummy_coding(self):
        t = empty_table((2, 2))
        d = build_design(DesignSpec(INDEPENDENCE, t.schema), t)
        rows = d.matrix.toarray()
        assert np.array_equal(rows[t.schema.encode((0, 0))], [0, 0])
        assert np.array_equal(rows[t.schema.encode((1, 1))], [1, 1])

    def test_two_way_row(self):
        t = empty_table((2, 2))
        d = build_design(DesignSpec(ALL_TWO_WAY, t.schema), t)
        rows = d.matrix.toarray()
        assert np.array_equal(rows[t.schema.encode((1, 1))], [1, 1, 1])
        assert np.array_equal(rows[t.schema.encode((1, 0))], [1, 0, 0])

    def test_nonzeros_count_per_row(self):
        t = empty_table((3, 4, 2))
        d = build_design(DesignSpec(INDEPENDENCE, t.schema), t)
        for flat in t.active_cells():
            codes = t.schema.decode(flat)
            expected = sum(1 for c in codes if c != 0)
            assert d.matrix[flat].nnz == expected

    def test_matches_dense_oracle(self):
        t = empty_table((3, 4, 2))
        for kind in (INDEPENDENCE, ALL_TWO_WAY):
            spec = DesignSpec(kind, t.schema)
            d = build_design(spec, t)
            assert np.array_equal(d.matrix.toarray(),
                                  dense_rows(spec, t.active_cells()))

    def test_structural_zero_rows_excluded(self):
        t = empty_table((2, 2)).with_structural_zeros({0})
        d = build_design(DesignSpec(INDEPENDENCE, t.schema), t)
        assert d.matrix.shape == (3, 2)
        assert list(d.cells) == [1, 2, 3]


class TestLinearPredictor:
    def test_zero_beta(self):
        t = empty_table((2, 2))
        d = build_design(DesignSpec(INDEPENDENCE, t.schema), t)
        assert np.array_equal(linear_predictor(d, np.zeros(2)), np.ones(4))

    def test_overall_mean_identity(self):
        t = empty_table((3, 2))
        d = build_design(DesignSpec(OVERALL_MEAN, t.schema), t)
        assert np.array_equal(linear_predictor(d, np.empty(0)), np.ones(6))

    def test_matches_dense_product(self):
        t = empty_table((2, 2))
        spec = DesignSpec(INDEPENDENCE, t.schema)
        d = build_design(spec, t)
        rng = np.random.default_rng(5)
        for _ in range(10):
            beta = rng.normal(size=2)
            expected = np.exp(dense_rows(spec, t.active_cells()) @ beta)
            assert np.allclose(linear_predictor(d, beta), expected, rtol=1e-12)

    def test_rejects_nonfinite_beta(self):
        t = empty_table((2, 2))
        d = build_design(DesignSpec(INDEPENDENCE, t.schema), t)
        with pytest.raises(DesignError):
            linear_predictor(d, np.array([np.nan, 0.0]))

    def test_multiplicative_across_variable_groups(self):
        # the predictor factorizes over disjoint groups of columns
        t = empty_table((3, 4, 2))
        d = build_design(DesignSpec(INDEPENDENCE, t.schema), t)
        rng = np.random.default_rng(7)
        beta = rng.normal(size=d.n_columns)
        beta_a = beta.copy()
        beta_a[2:] = 0.0   # first variable's columns only (3-1 = 2)
        beta_b = beta.copy()
        beta_b[:2] = 0.0
        full = linear_predictor(d, beta)
        assert np.allclose(full, linear_predictor(d, beta_a)
                           * linear_predictor(d, beta_b), rtol=1e-12)


class TestRank:
    @pytest.mark.parametrize("cards", [(2, 2), (3, 4), (3, 2, 2)])
    def test_independence_full_column_rank(self, cards):
        t = empty_table(cards)
        spec = DesignSpec(INDEPENDENCE, t.schema)
        d = build_design(spec, t)
        assert np.linalg.matrix_rank(d.matrix.toarray()) == spec.n_columns
