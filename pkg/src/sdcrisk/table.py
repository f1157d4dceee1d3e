"""Key-variable schemas and sparse contingency tables.

A table of "key variables" cross-classifies the records of a microdata
sample.  Cells are addressed either by a tuple of 0-based category codes
(one per variable) or by the equivalent flat index under mixed-radix
encoding.  Tables are stored sparsely: only nonzero counts are kept, and
cells declared impossible ("structural zeros") are excluded from every
downstream computation.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

# Dense K-sized vectors are only materialized below this cell count.
DENSE_CELL_LIMIT = 2**20


class TableError(ValueError):
    """Raised for invalid schemas, rows, or count assignments."""


@dataclass(frozen=True)
class KeySchema:
    """Ordered key variables with their category cardinalities.

    ``variables`` is a sequence of ``(name, cardinality)`` pairs.  The
    flat cell index of a code tuple ``(t_1, ..., t_J)`` is its
    mixed-radix value, with the first variable most significant.
    """

    variables: tuple[tuple[str, int], ...]

    def __post_init__(self):
        variables = tuple((str(n), int(c)) for n, c in self.variables)
        object.__setattr__(self, "variables", variables)
        if not variables:
            raise TableError("schema needs at least one variable")
        names = [n for n, _ in variables]
        if len(set(names)) != len(names):
            raise TableError(f"duplicate variable names in schema: {names}")
        for name, card in variables:
            if card < 2:
                raise TableError(f"variable {name!r} needs cardinality >= 2, got {card}")
        n_cells = 1
        for _, card in variables:
            n_cells *= card
            if n_cells > 2**62:
                raise TableError("cell count overflows 63-bit indexing")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.variables)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(c for _, c in self.variables)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_cells(self) -> int:
        """Total number of cells K."""
        out = 1
        for _, c in self.variables:
            out *= c
        return out

    def encode(self, codes) -> int:
        """Flat index of one code tuple."""
        cards = self.cardinalities
        if len(codes) != len(cards):
            raise TableError(f"expected {len(cards)} codes, got {len(codes)}")
        flat = 0
        for j, (t, c) in enumerate(zip(codes, cards)):
            t = int(t)
            if not 0 <= t < c:
                raise TableError(
                    f"variable {self.names[j]!r}: code {t} out of range [0, {c})"
                )
            flat = flat * c + t
        return flat

    def decode(self, flat: int) -> tuple[int, ...]:
        """Code tuple of one flat index."""
        if not 0 <= flat < self.n_cells:
            raise TableError(f"flat index {flat} out of range [0, {self.n_cells})")
        out = []
        for card in reversed(self.cardinalities):
            out.append(flat % card)
            flat //= card
        return tuple(reversed(out))

    def encode_rows(self, rows: np.ndarray) -> np.ndarray:
        """Vectorized encode of an (n, J) array of codes."""
        rows = np.asarray(rows)
        return np.ravel_multi_index(tuple(rows.T), self.cardinalities)

    def decode_flats(self, flats: np.ndarray) -> np.ndarray:
        """Vectorized decode to an (n, J) array of codes."""
        return np.column_stack(np.unravel_index(np.asarray(flats), self.cardinalities))


@dataclass(frozen=True)
class CellIndex:
    """A cell addressed both ways: category codes and flat index."""

    codes: tuple[int, ...]
    flat: int

    @classmethod
    def from_codes(cls, schema: KeySchema, codes) -> "CellIndex":
        return cls(tuple(int(t) for t in codes), schema.encode(codes))

    @classmethod
    def from_flat(cls, schema: KeySchema, flat: int) -> "CellIndex":
        return cls(schema.decode(flat), int(flat))


@dataclass(frozen=True)
class ContingencyTable:
    """Sparse sample counts over the cells of a key-variable schema.

    ``counts`` maps flat cell index to a positive sample frequency; absent
    cells have frequency zero.  ``pi`` is the known sampling fraction.
    ``population_counts`` is only present in benchmark mode, when the full
    population table is available to evaluate estimates against.
    """

    schema: KeySchema
    counts: dict[int, int]
    pi: float
    structural_zeros: frozenset[int] = field(default_factory=frozenset)
    population_counts: dict[int, int] | None = None

    def __post_init__(self):
        if not 0.0 < self.pi < 1.0:
            raise TableError(f"sampling fraction must be in (0,1), got {self.pi}")
        K = self.schema.n_cells
        counts = {}
        for k, f in self.counts.items():
            k, f = int(k), int(f)
            if not 0 <= k < K:
                raise TableError(f"cell index {k} out of range [0, {K})")
            if f < 0:
                raise TableError(f"negative count {f} in cell {k}")
            if f > 0:
                counts[k] = f
        object.__setattr__(self, "counts", counts)
        sz = frozenset(int(k) for k in self.structural_zeros)
        for k in sz:
            if not 0 <= k < K:
                raise TableError(f"structural zero {k} out of range [0, {K})")
            if counts.get(k, 0) > 0:
                raise TableError(
                    f"cell {k} has observed count {counts[k]} but is marked as a "
                    "structural zero"
                )
        object.__setattr__(self, "structural_zeros", sz)
        if self.population_counts is not None:
            pop = {}
            for k, F in self.population_counts.items():
                k, F = int(k), int(F)
                if F < 0 or not 0 <= k < K:
                    raise TableError(f"bad population count {F} in cell {k}")
                if k in sz and F > 0:
                    raise TableError(f"structural zero {k} has population count {F}")
                if F < counts.get(k, 0):
                    raise TableError(
                        f"cell {k}: population count {F} below sample count {counts[k]}"
                    )
                if F > 0:
                    pop[k] = F
            for k, f in counts.items():
                if pop.get(k, 0) < f:
                    raise TableError(
                        f"cell {k}: population count {pop.get(k, 0)} below sample count {f}"
                    )
            object.__setattr__(self, "population_counts", pop)

    @property
    def n(self) -> int:
        """Number of sampled records."""
        return sum(self.counts.values())

    @property
    def n_cells(self) -> int:
        return self.schema.n_cells

    @property
    def n_active(self) -> int:
        """Number of cells that are not structural zeros (K_eff)."""
        return self.schema.n_cells - len(self.structural_zeros)

    def active_cells(self) -> np.ndarray:
        """Sorted flat indices of all non-structural-zero cells."""
        K = self.schema.n_cells
        if K > 2**26:
            raise TableError(f"refusing to enumerate {K} cells")
        if not self.structural_zeros:
            return np.arange(K, dtype=np.int64)
        mask = np.ones(K, dtype=bool)
        mask[np.fromiter(self.structural_zeros, dtype=np.int64)] = False
        return np.nonzero(mask)[0].astype(np.int64)

    def counts_for(self, cells: np.ndarray) -> np.ndarray:
        """Counts aligned with ``cells`` (zero where absent)."""
        return np.array([self.counts.get(int(k), 0) for k in cells], dtype=np.int64)

    def population_counts_for(self, cells: np.ndarray) -> np.ndarray:
        if self.population_counts is None:
            raise TableError("table carries no population counts")
        return np.array(
            [self.population_counts.get(int(k), 0) for k in cells], dtype=np.int64
        )

    def sample_uniques(self) -> np.ndarray:
        """Sorted flat indices of cells with a sample frequency of one."""
        return np.array(sorted(k for k, f in self.counts.items() if f == 1), dtype=np.int64)

    def dense_counts(self, limit: int = DENSE_CELL_LIMIT) -> np.ndarray:
        """Dense count vector of length K; guarded against huge tables."""
        K = self.schema.n_cells
        if K > limit:
            raise TableError(f"dense vector of {K} cells exceeds limit {limit}")
        out = np.zeros(K, dtype=np.int64)
        for k, f in self.counts.items():
            out[k] = f
        return out

    def with_structural_zeros(self, cells) -> "ContingencyTable":
        """Return a copy with ``cells`` additionally marked impossible.

        Marking a cell with an observed count is rejected: a positive
        frequency contradicts impossibility.
        """
        cells = {int(k) for k in cells}
        for k in cells:
            if self.counts.get(k, 0) > 0:
                raise TableError(
                    f"cannot mark cell {k} as structural zero: observed count "
                    f"{self.counts[k]}"
                )
        return ContingencyTable(
            schema=self.schema,
            counts=self.counts,
            pi=self.pi,
            structural_zeros=self.structural_zeros | cells,
            population_counts=self.population_counts,
        )

    def without_population(self) -> "ContingencyTable":
        """Estimation view: identical table with population counts stripped."""
        if self.population_counts is None:
            return self
        return ContingencyTable(
            schema=self.schema,
            counts=self.counts,
            pi=self.pi,
            structural_zeros=self.structural_zeros,
        )


def ingest_microdata(rows, schema: KeySchema, pi: float,
                     structural_zeros=frozenset()) -> ContingencyTable:
    """Tabulate an iterable of category-code tuples into a table.

    Rows are validated one at a time; the error for a bad row names the
    1-based row number and the offending variable.
    """
    counts: dict[int, int] = {}
    cards = schema.cardinalities
    for i, row in enumerate(rows, start=1):
        if len(row) != len(cards):
            raise TableError(
                f"row {i}: expected {len(cards)} values, got {len(row)}"
            )
        flat = 0
        for j, (t, c) in enumerate(zip(row, cards)):
            try:
                t = int(t)
            except (TypeError, ValueError):
                raise TableError(
                    f"row {i}: variable {schema.names[j]!r}: non-integer code {row[j]!r}"
                ) from None
            if not 0 <= t < c:
                raise TableError(
                    f"row {i}: variable {schema.names[j]!r}: code {t} out of "
                    f"range [0, {c})"
                )
            flat = flat * c + t
        counts[flat] = counts.get(flat, 0) + 1
    return ContingencyTable(schema=schema, counts=counts, pi=pi,
                            structural_zeros=frozenset(structural_zeros))


def _sniff_delimiter(path, delimiter):
    if delimiter is not None:
        return delimiter
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    return "\t" if first.count("\t") >= first.count(",") else ","


def _apply_labels(value, var, labels):
    if labels and var in labels and value in labels[var]:
        return labels[var][value]
    return value


def read_microdata(path, schema: KeySchema, pi: float, delimiter=None,
                   labels: dict[str, dict[str, int]] | None = None,
                   structural_zeros=frozenset()) -> ContingencyTable:
    """Read delimited microdata (header row of variable names, one record
    per row) and tabulate it.

    ``labels`` optionally maps external category labels to 0-based codes,
    per variable; unlabeled values must already be integer codes.
    """
    delimiter = _sniff_delimiter(path, delimiter)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise TableError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if set(header) != set(schema.names):
            raise TableError(
                f"{path}: header {header} does not match schema variables "
                f"{list(schema.names)}"
            )
        order = [header.index(n) for n in schema.names]

        def rows():
            for rec in reader:
                if not rec or all(not v.strip() for v in rec):
                    continue
                if len(rec) != len(header):
                    yield rec  # let ingest report the arity error by row number
                    continue
                yield [
                    _apply_labels(rec[j].strip(), schema.names[pos], labels)
                    for pos, j in enumerate(order)
                ]

        return ingest_microdata(rows(), schema, pi, structural_zeros)


def read_tabulated(path, schema: KeySchema, pi: float, delimiter=None,
                   structural_zeros=frozenset()) -> ContingencyTable:
    """Read a pre-tabulated table: columns ``var1..varJ, count`` plus an
    optional ``pop_count`` column supplying population frequencies.
    """
    delimiter = _sniff_delimiter(path, delimiter)
    counts: dict[int, int] = {}
    pop: dict[int, int] = {}
    have_pop = False
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise TableError(f"{path}: empty file")
        header = [h.strip() for h in header]
        try:
            var_cols = [header.index(n) for n in schema.names]
            count_col = header.index("count")
        except ValueError as exc:
            raise TableError(f"{path}: missing column: {exc}") from None
        pop_col = header.index("pop_count") if "pop_count" in header else None
        have_pop = pop_col is not None
        for i, rec in enumerate(reader, start=1):
            if not rec or all(not v.strip() for v in rec):
                continue
            try:
                codes = [int(rec[j]) for j in var_cols]
                flat = schema.encode(codes)
            except (TableError, ValueError, IndexError) as exc:
                raise TableError(f"{path}: data row {i}: {exc}") from None
            f = int(rec[count_col])
            if f < 0:
                raise TableError(f"{path}: data row {i}: negative count {f}")
            if f:
                counts[flat] = counts.get(flat, 0) + f
            if pop_col is not None:
                F = int(rec[pop_col])
                if F:
                    pop[flat] = pop.get(flat, 0) + F
    return ContingencyTable(
        schema=schema, counts=counts, pi=pi,
        structural_zeros=frozenset(structural_zeros),
        population_counts=pop if have_pop else None,
    )


def read_structural_zero_patterns(path, schema: KeySchema, delimiter=None) -> set[int]:
    """Expand a file of category patterns (one per line, ``*`` wildcard)
    into the set of flat cell indices they cover.

    Lines starting with ``#`` are comments.  Each pattern has one entry
    per key variable, either a category code or ``*``.
    """
    delimiter = delimiter or ","
    cards = schema.cardinalities
    cells: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(delimiter)]
            if len(parts) != len(cards):
                raise TableError(
                    f"{path}: pattern line {i}: expected {len(cards)} entries, "
                    f"got {len(parts)}"
                )
            choices = []
            for j, p in enumerate(parts):
                if p == "*":
                    choices.append(range(cards[j]))
                else:
                    t = int(p)
                    if not 0 <= t < cards[j]:
                        raise TableError(
                            f"{path}: pattern line {i}: variable "
                            f"{schema.names[j]!r}: code {t} out of range"
                        )
                    choices.append((t,))
            for combo in itertools.product(*choices):
                cells.add(schema.encode(combo))
    return cells
