"""Feature extraction for (query, current config, candidate config) triples.

A triple becomes a fixed number ``t`` of per-slot vectors, one slot per
touched column, zero-padded up to ``t``. Two views are produced:

* ``v1`` -- raw features, with the touched column identified by an integer
  code (the "categorical" coordinate).
* ``v2`` -- the model input, where the code is replaced by a one-hot block
  with one extra slot reserved for out-of-vocabulary columns.

A slot vector that is entirely zero marks padding, and padding stays
all-zero through the one-hot expansion.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .synthdb import IndexConfig, Query, Schema

# v1 coordinate layout (RAW_DIM columns per slot):
#   0 selectivity          (0, 1]
#   1 row count            / max row count in schema
#   2 column code          integer code of (table, column); categorical
#   3 covered by an index in the current config
#   4 covered by an index in the candidate config
#   5 leading column of an index in the current config
#   6 leading column of an index in the candidate config
#   7 per-row width of the matching candidate index / max table row width
RAW_DIM = 8
CODE_COORD = 2


@dataclass(frozen=True)
class FeatureSet:
    v1: np.ndarray  # (t, RAW_DIM)
    v2: np.ndarray  # (t, embedded dim)

    @property
    def t(self) -> int:
        return self.v1.shape[0]

    @property
    def dim1(self) -> int:
        return self.v1.shape[1]

    @property
    def dim2(self) -> int:
        return self.v2.shape[1]


def one_hot_block(code: float, vocab_size: int) -> np.ndarray:
    """Expand a categorical code into a one-hot block of ``vocab_size + 1``.

    The trailing slot is reserved for codes outside ``[0, vocab_size)`` so
    unseen columns flow through the model instead of failing.
    """
    block = np.zeros(vocab_size + 1)
    idx = int(code)
    if idx == code and 0 <= idx < vocab_size:
        block[idx] = 1.0
    else:
        block[vocab_size] = 1.0
    return block


class FeatureExtractor:
    """Schema-bound extractor with a fixed slot count ``t``.

    The column vocabulary and normalization bounds are frozen at construction
    so that feature vectors are a pure function of the triple.
    """

    def __init__(self, schema: Schema, t: int):
        if t < 1:
            raise ValueError("t must be >= 1")
        self.schema = schema
        self.t = t
        self.vocab = {pair: i for i, pair in enumerate(schema.all_columns())}
        self.vocab_size = len(self.vocab)
        self.dim1 = RAW_DIM
        self.dim2 = RAW_DIM - 1 + self.vocab_size + 1
        self._max_rows = schema.max_row_count
        self._max_row_width = max(tb.row_width_bytes for tb in schema.tables)

    def extract(self, query: Query, i0: IndexConfig, i: IndexConfig) -> FeatureSet:
        if len(query.touched) > self.t:
            raise ValueError(
                f"query {query.id} touches {len(query.touched)} slots; extractor fixed at t={self.t}"
            )
        v1 = np.zeros((self.t, self.dim1))
        for slot, tc in enumerate(query.touched):
            table = self.schema.table(tc.table)
            code = self.vocab.get((tc.table, tc.column), self.vocab_size)
            v1[slot, 0] = tc.selectivity
            v1[slot, 1] = table.row_count / self._max_rows
            v1[slot, CODE_COORD] = code
            v1[slot, 3] = self._covered(i0, tc.table, tc.column)
            v1[slot, 4] = self._covered(i, tc.table, tc.column)
            v1[slot, 5] = self._leading(i0, tc.table, tc.column)
            v1[slot, 6] = self._leading(i, tc.table, tc.column)
            v1[slot, 7] = self._match_width(i, tc.table, tc.column)
        return FeatureSet(v1=v1, v2=self.embed(v1))

    def embed(self, v1: np.ndarray) -> np.ndarray:
        """One-hot expand the code coordinate of each slot vector."""
        v1 = np.asarray(v1, dtype=float)
        if v1.ndim != 2 or v1.shape[1] != self.dim1:
            raise ValueError(f"expected (t, {self.dim1}) raw features, got {v1.shape}")
        out = np.zeros((v1.shape[0], self.dim2))
        for slot in range(v1.shape[0]):
            row = v1[slot]
            if not row.any():
                continue  # padding stays zero
            block = one_hot_block(row[CODE_COORD], self.vocab_size)
            out[slot] = np.concatenate([row[:CODE_COORD], block, row[CODE_COORD + 1 :]])
        return out

    def _covered(self, config: IndexConfig, table: str, column: str) -> float:
        return float(
            any(ix.table == table and column in ix.columns for ix in config.indexes)
        )

    def _leading(self, config: IndexConfig, table: str, column: str) -> float:
        return float(
            any(ix.table == table and ix.leading == column for ix in config.indexes)
        )

    def _match_width(self, config: IndexConfig, table: str, column: str) -> float:
        matches = sorted(
            ix for ix in config.indexes if ix.table == table and ix.leading == column
        )
        if not matches:
            return 0.0
        tb = self.schema.table(table)
        width = sum(tb.column(c).width_bytes for c in matches[0].columns)
        return width / self._max_row_width


def featureset_to_csv(fs: FeatureSet, path) -> None:
    """Debug dump: one row per slot vector, columns are raw coordinates."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(fs.dim1)])
        for row in fs.v1:
            writer.writerow([repr(float(x)) for x in row])
