"""Synthetic database substrate: schema/workload generation, an analytic cost
oracle with controllable execution noise, and a deterministic biased what-if
estimator.

Everything here is a pure function of its inputs and seeds, so whole pipelines
replay byte-identically. The cost model is a product-form scan model: each
touched column contributes ``scan_cost_per_row * row_count``, discounted by
``selectivity ** index_benefit_exponent`` when the candidate configuration has
an index whose leading column matches it. Adding indexes therefore never
increases the noiseless cost.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

INDEX_WIDTH_CHOICES = (4, 8, 16, 32)


@dataclass(frozen=True)
class Column:
    name: str
    distinct_values: int
    width_bytes: int


@dataclass(frozen=True)
class Table:
    name: str
    row_count: int
    columns: tuple[Column, ...]

    def column(self, name: str) -> Column:
        for col in self.columns:
            if col.name == name:
                return col
        raise ValueError(f"unknown column {name!r} in table {self.name!r}")

    @property
    def row_width_bytes(self) -> int:
        return sum(c.width_bytes for c in self.columns)


@dataclass(frozen=True)
class Schema:
    tables: tuple[Table, ...]

    def __post_init__(self) -> None:
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise ValueError("table names must be unique")
        for table in self.tables:
            cols = [c.name for c in table.columns]
            if len(set(cols)) != len(cols):
                raise ValueError(f"column names must be unique within table {table.name!r}")
            for col in table.columns:
                if col.distinct_values > table.row_count:
                    raise ValueError(
                        f"{table.name}.{col.name}: distinct_values exceeds row_count"
                    )
                if col.distinct_values <= 0 or col.width_bytes <= 0:
                    raise ValueError(f"{table.name}.{col.name}: fields must be positive")
            if table.row_count <= 0:
                raise ValueError(f"table {table.name!r}: row_count must be positive")

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise ValueError(f"unknown table {name!r}")

    @property
    def max_row_count(self) -> int:
        return max(t.row_count for t in self.tables)

    @property
    def total_bytes(self) -> int:
        return sum(t.row_count * t.row_width_bytes for t in self.tables)

    def all_columns(self) -> list[tuple[str, str]]:
        """All (table, column) pairs in declaration order."""
        return [(t.name, c.name) for t in self.tables for c in t.columns]


@dataclass(frozen=True)
class TouchedColumn:
    table: str
    column: str
    selectivity: float


@dataclass(frozen=True)
class Query:
    id: str
    template_id: int
    touched: tuple[TouchedColumn, ...]
    join_edges: tuple[tuple[str, str], ...]
    weight: float

    def validate(self, schema: Schema) -> None:
        for tc in self.touched:
            schema.table(tc.table).column(tc.column)
            if not 0.0 < tc.selectivity <= 1.0:
                raise ValueError(f"query {self.id}: selectivity must be in (0, 1]")
        for a, b in self.join_edges:
            schema.table(a)
            schema.table(b)
        if self.weight <= 0:
            raise ValueError(f"query {self.id}: weight must be positive")


@dataclass(frozen=True, order=True)
class Index:
    table: str
    columns: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.columns:
            raise ValueError("index must cover at least one column")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("index columns must be distinct")

    @property
    def leading(self) -> str:
        return self.columns[0]

    def size_bytes(self, schema: Schema) -> int:
        table = schema.table(self.table)
        return table.row_count * sum(table.column(c).width_bytes for c in self.columns)

    def key(self) -> str:
        return f"{self.table}({','.join(self.columns)})"


def _parse_index_key(key: str) -> Index:
    table, _, rest = key.partition("(")
    if not rest.endswith(")"):
        raise ValueError(f"malformed index key {key!r}")
    return Index(table, tuple(rest[:-1].split(",")))


@dataclass(frozen=True)
class IndexConfig:
    indexes: frozenset[Index] = field(default_factory=frozenset)

    @staticmethod
    def of(*indexes: Index) -> "IndexConfig":
        return IndexConfig(frozenset(indexes))

    def validate(self, schema: Schema) -> None:
        for ix in self.indexes:
            table = schema.table(ix.table)
            for c in ix.columns:
                table.column(c)

    def with_index(self, ix: Index) -> "IndexConfig":
        return IndexConfig(self.indexes | {ix})

    def size_bytes(self, schema: Schema) -> int:
        return sum(ix.size_bytes(schema) for ix in self.indexes)

    def sorted_indexes(self) -> list[Index]:
        return sorted(self.indexes)

    def key(self) -> str:
        """Canonical string form, stable across runs (used for hashing and CSV)."""
        return ";".join(ix.key() for ix in self.sorted_indexes()) or "-"

    @staticmethod
    def from_key(key: str) -> "IndexConfig":
        if key == "-":
            return IndexConfig()
        return IndexConfig(frozenset(_parse_index_key(part) for part in key.split(";")))


EMPTY_CONFIG = IndexConfig()


@dataclass(frozen=True)
class CostOracleParams:
    scan_cost_per_row: float = 1.0
    index_benefit_exponent: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.index_benefit_exponent < 0:
            # selectivity <= 1, so a negative exponent would let an index
            # raise the cost and break monotonicity.
            raise ValueError("index_benefit_exponent must be nonnegative")
        if self.scan_cost_per_row <= 0:
            raise ValueError("scan_cost_per_row must be positive")


@dataclass(frozen=True)
class WhatIfParams:
    bias_factor: float = 1.0
    error_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.error_sigma < 0:
            raise ValueError("error_sigma must be nonnegative")
        if self.bias_factor <= 0:
            raise ValueError("bias_factor must be positive")


# ---------------------------------------------------------------------------
# Generation


@dataclass(frozen=True)
class SchemaSpec:
    n_tables: int
    columns_per_table: int
    min_rows: int = 1_000
    max_rows: int = 1_000_000

    def __post_init__(self) -> None:
        if self.n_tables < 1:
            raise ValueError("schema spec needs at least one table")
        if self.columns_per_table < 1:
            raise ValueError("schema spec needs at least one column per table")
        if not 0 < self.min_rows <= self.max_rows:
            raise ValueError("schema spec needs 0 < min_rows <= max_rows")


def generate_schema(spec: SchemaSpec, seed: int) -> Schema:
    """Draw a random schema; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    tables = []
    for i in range(spec.n_tables):
        row_count = int(rng.integers(spec.min_rows, spec.max_rows + 1))
        columns = []
        for j in range(spec.columns_per_table):
            distinct = int(rng.integers(1, row_count + 1))
            width = int(rng.choice(INDEX_WIDTH_CHOICES))
            columns.append(Column(f"c{j}", distinct, width))
        tables.append(Table(f"t{i}", row_count, tuple(columns)))
    return Schema(tuple(tables))


def generate_workload(
    schema: Schema,
    n_templates: int,
    n_queries_per_template: int,
    seed: int,
    max_touched: int = 3,
) -> list[Query]:
    """Generate templated queries.

    Each template fixes a set of touched (table, column) pairs plus join edges;
    queries within a template redraw only their selectivities and weights.
    """
    if n_templates < 1:
        raise ValueError("n_templates must be >= 1")
    if n_queries_per_template < 1:
        raise ValueError("n_queries_per_template must be >= 1")
    rng = np.random.default_rng(seed)
    queries: list[Query] = []
    qid = 0
    for tid in range(n_templates):
        n_touch = int(rng.integers(1, min(max_touched, len(schema.tables)) + 1))
        table_idx = rng.choice(len(schema.tables), size=n_touch, replace=False)
        touched_spec = []
        for ti in sorted(int(i) for i in table_idx):
            table = schema.tables[ti]
            ci = int(rng.integers(0, len(table.columns)))
            # Per-template selectivity center; queries scatter around it.
            center = 10.0 ** rng.uniform(-2.3, -0.3)
            touched_spec.append((table.name, table.columns[ci].name, center))
        join_edges = tuple(
            (touched_spec[i][0], touched_spec[i + 1][0]) for i in range(n_touch - 1)
        )
        for _ in range(n_queries_per_template):
            touched = tuple(
                TouchedColumn(
                    tbl,
                    col,
                    float(np.clip(center * 10.0 ** rng.normal(0.0, 0.25), 1e-4, 1.0)),
                )
                for tbl, col, center in touched_spec
            )
            weight = float(rng.uniform(0.5, 2.0))
            queries.append(Query(f"q{qid:04d}", tid, touched, join_edges, weight))
            qid += 1
    return queries


def max_touched_slots(workload: list[Query]) -> int:
    return max(len(q.touched) for q in workload)


# ---------------------------------------------------------------------------
# Cost oracle


def _leading_match(config: IndexConfig, table: str, column: str) -> bool:
    return any(ix.table == table and ix.leading == column for ix in config.indexes)


def true_cost_noiseless(
    query: Query, config: IndexConfig, params: CostOracleParams, schema: Schema
) -> float:
    """Analytic scan cost of ``query`` under ``config``, without noise."""
    query.validate(schema)
    total = 0.0
    for tc in query.touched:
        term = params.scan_cost_per_row * schema.table(tc.table).row_count
        if _leading_match(config, tc.table, tc.column):
            term *= tc.selectivity**params.index_benefit_exponent
        total += term
    return total


class CostOracle:
    """Ground-truth cost source with optional multiplicative log-normal noise.

    Noisy draws come from one stream seeded by ``params.seed``; replaying the
    same call sequence reproduces the same values bit for bit.
    """

    def __init__(self, schema: Schema, params: CostOracleParams):
        self.schema = schema
        self.params = params
        self._rng = np.random.default_rng(params.seed)

    def true_cost(self, query: Query, config: IndexConfig, draw: bool = False) -> float:
        cost = true_cost_noiseless(query, config, self.params, self.schema)
        if draw and self.params.noise_sigma > 0:
            cost *= math.exp(self._rng.normal(0.0, self.params.noise_sigma))
        return cost

    def observed_benefit(self, query: Query, i0: IndexConfig, i: IndexConfig) -> float:
        """Cost reduction from replacing ``i0`` with ``i``, one noisy draw each."""
        return self.true_cost(query, i0, draw=True) - self.true_cost(query, i, draw=True)


def whatif_estimate(
    query: Query,
    config: IndexConfig,
    wp: WhatIfParams,
    cp: CostOracleParams,
    schema: Schema,
) -> float:
    """Biased, noisy cost estimate that is frozen per (query, config).

    The multiplicative error is drawn from a stream keyed by a hash of
    (seed, query id, canonical config), so repeated calls agree, mirroring a
    real optimizer's determinism for a fixed plan.
    """
    base = true_cost_noiseless(query, config, cp, schema)
    err = 0.0
    if wp.error_sigma > 0:
        key = f"{wp.seed}|{query.id}|{config.key()}".encode()
        sub_seed = int.from_bytes(hashlib.sha256(key).digest()[:8], "big")
        err = float(np.random.default_rng(sub_seed).normal(0.0, wp.error_sigma))
    return wp.bias_factor * base * math.exp(err)


# ---------------------------------------------------------------------------
# JSON serialization


def schema_to_dict(schema: Schema) -> dict:
    return {
        "tables": [
            {
                "name": t.name,
                "row_count": t.row_count,
                "columns": [
                    {"name": c.name, "distinct_values": c.distinct_values,
                     "width_bytes": c.width_bytes}
                    for c in t.columns
                ],
            }
            for t in schema.tables
        ]
    }


def schema_from_dict(data: dict) -> Schema:
    return Schema(
        tuple(
            Table(
                t["name"],
                t["row_count"],
                tuple(
                    Column(c["name"], c["distinct_values"], c["width_bytes"])
                    for c in t["columns"]
                ),
            )
            for t in data["tables"]
        )
    )


def workload_to_dict(workload: list[Query]) -> dict:
    return {
        "queries": [
            {
                "id": q.id,
                "template_id": q.template_id,
                "touched": [[tc.table, tc.column, tc.selectivity] for tc in q.touched],
                "join_edges": [list(e) for e in q.join_edges],
                "weight": q.weight,
            }
            for q in workload
        ]
    }


def workload_from_dict(data: dict) -> list[Query]:
    return [
        Query(
            q["id"],
            q["template_id"],
            tuple(TouchedColumn(t, c, s) for t, c, s in q["touched"]),
            tuple((a, b) for a, b in q["join_edges"]),
            q["weight"],
        )
        for q in data["queries"]
    ]


def dump_json(data: dict, path) -> None:
    """Canonical JSON dump: sorted keys, newline-terminated, byte-stable."""
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
