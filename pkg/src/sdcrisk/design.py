"""Fixed-effects design structures for log-linear cell means.

Three structures are supported: no fixed effects at all (overall mean),
main effects of every key variable (independence), and main effects plus
all two-way interactions.  Coding is treatment (dummy) coding with
category 0 as the per-variable reference and *no intercept column*: the
overall level is absorbed by the multiplicative random effects, which
keeps the parameterization identifiable.

Rows are binary and generated from closed-form column arithmetic; the
per-cell rows are assembled into one sparse matrix over the table's
non-structural cells rather than ever being stored densely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .table import ContingencyTable, KeySchema

OVERALL_MEAN = "overall_mean"
INDEPENDENCE = "independence"
ALL_TWO_WAY = "all_two_way"
KINDS = (OVERALL_MEAN, INDEPENDENCE, ALL_TWO_WAY)

MAX_COLUMNS = 100_000


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class DesignSpec:
    """A fixed-effects structure over a schema."""

    kind: str
    schema: KeySchema

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DesignError(f"unknown design kind {self.kind!r}; expected one of {KINDS}")

    @property
    def n_columns(self) -> int:
        """Number of coefficients q under the chosen structure."""
        cards = self.schema.cardinalities
        if self.kind == OVERALL_MEAN:
            return 0
        q = sum(c - 1 for c in cards)
        if self.kind == ALL_TWO_WAY:
            for j in range(len(cards)):
                for l in range(j + 1, len(cards)):
                    q += (cards[j] - 1) * (cards[l] - 1)
        return q


def _column_offsets(spec: DesignSpec):
    """Start column of each variable's dummy block and each pair's block."""
    cards = spec.schema.cardinalities
    main = []
    off = 0
    for c in cards:
        main.append(off)
        off += c - 1
    pair = {}
    if spec.kind == ALL_TWO_WAY:
        for j in range(len(cards)):
            for l in range(j + 1, len(cards)):
                pair[(j, l)] = off
                off += (cards[j] - 1) * (cards[l] - 1)
    return main, pair


def design_row_columns(spec: DesignSpec, codes) -> np.ndarray:
    """Active (value 1) column indices of a single cell's design row."""
    if spec.kind == OVERALL_MEAN:
        return np.empty(0, dtype=np.int64)
    cards = spec.schema.cardinalities
    main, pair = _column_offsets(spec)
    cols = [main[j] + t - 1 for j, t in enumerate(codes) if t > 0]
    if spec.kind == ALL_TWO_WAY:
        for j in range(len(cards)):
            if codes[j] == 0:
                continue
            for l in range(j + 1, len(cards)):
                if codes[l] == 0:
                    continue
                cols.append(
                    pair[(j, l)]
                    + (codes[j] - 1) * (cards[l] - 1)
                    + (codes[l] - 1)
                )
    return np.asarray(sorted(cols), dtype=np.int64)


@dataclass(frozen=True)
class DesignMatrix:
    """Sparse design rows for the non-structural cells of a table.

    ``cells`` lists the flat cell indices (sorted) that the rows of
    ``matrix`` correspond to.  All entries are 0/1.
    """

    spec: DesignSpec
    cells: np.ndarray
    matrix: sp.csr_matrix

    @property
    def n_columns(self) -> int:
        return self.spec.n_columns

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    def row_columns(self, flat: int) -> np.ndarray:
        return design_row_columns(self.spec, self.spec.schema.decode(flat))


def build_design(spec: DesignSpec, table: ContingencyTable,
                 max_columns: int = MAX_COLUMNS) -> DesignMatrix:
    """Assemble the sparse design over the table's active cells."""
    q = spec.n_columns
    if q > max_columns:
        raise DesignError(
            f"design would have q={q} columns, above the configured maximum "
            f"{max_columns}"
        )
    cells = table.active_cells()
    K_eff = len(cells)
    if q == 0:
        matrix = sp.csr_matrix((K_eff, 0))
        return DesignMatrix(spec=spec, cells=cells, matrix=matrix)

    cards = np.asarray(spec.schema.cardinalities)
    J = len(cards)
    codes = spec.schema.decode_flats(cells)  # (K_eff, J)
    main, pair = _column_offsets(spec)

    col_chunks = []
    row_chunks = []
    rows_idx = np.arange(K_eff, dtype=np.int64)
    for j in range(J):
        nz = codes[:, j] > 0
        col_chunks.append(main[j] + codes[nz, j] - 1)
        row_chunks.append(rows_idx[nz])
    if spec.kind == ALL_TWO_WAY:
        for j in range(J):
            for l in range(j + 1, J):
                nz = (codes[:, j] > 0) & (codes[:, l] > 0)
                col_chunks.append(
                    pair[(j, l)]
                    + (codes[nz, j] - 1) * (cards[l] - 1)
                    + (codes[nz, l] - 1)
                )
                row_chunks.append(rows_idx[nz])
    rows = np.concatenate(row_chunks)
    cols = np.concatenate(col_chunks)
    data = np.ones(len(rows), dtype=np.float64)
    matrix = sp.csr_matrix((data, (rows, cols)), shape=(K_eff, q))
    return DesignMatrix(spec=spec, cells=cells, matrix=matrix)


def linear_predictor(design: DesignMatrix, beta: np.ndarray) -> np.ndarray:
    """Multiplicative fixed-effects contribution exp(row . beta) per cell."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (design.n_columns,):
        raise DesignError(
            f"beta has shape {beta.shape}, design has {design.n_columns} columns"
        )
    if beta.size and not np.all(np.isfinite(beta)):
        raise DesignError("beta contains non-finite entries")
    if design.n_columns == 0:
        return np.ones(design.n_rows)
    xi = np.exp(design.matrix @ beta)
    bad = ~np.isfinite(xi)
    if np.any(bad):
        cell = design.cells[int(np.nonzero(bad)[0][0])]
        raise DesignError(f"non-finite predictor at cell {cell}")
    return xi
