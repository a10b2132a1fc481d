"""Dataset construction and the out-of-distribution split.

A sample is one (query, current config, candidate config) triple with its
observed (noisy) benefit and the noiseless costs on the side as ground truth.
The evaluation partition is grown from held-out query templates and held-out
indexed columns, so it is distributionally distinct from train/test by
construction: a sample lands in eval iff its query comes from a held-out
template or its candidate config touches a held-out column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..synthdb import (
    EMPTY_CONFIG,
    CostOracle,
    Index,
    IndexConfig,
    Query,
    Schema,
    true_cost_noiseless,
)


@dataclass(frozen=True)
class Sample:
    query: Query
    i0: IndexConfig
    config: IndexConfig
    config_id: str
    cost_i0: float  # noiseless cost under i0
    cost_i: float  # noiseless cost under config
    benefit: float  # observed (possibly noisy) benefit

    @property
    def relative_benefit(self) -> float:
        return self.benefit / self.cost_i0

    @property
    def rel_true(self) -> float:
        """Noiseless relative benefit, the evaluation ground truth."""
        return (self.cost_i0 - self.cost_i) / self.cost_i0

    @property
    def sample_id(self) -> str:
        return f"{self.query.id}|{self.config_id}"


def configs_from_candidates(
    candidates: list[Index],
    seed: int,
    n_multi: int = 0,
    max_indexes: int = 3,
    include_empty: bool = True,
) -> list[tuple[str, IndexConfig]]:
    """Candidate configurations: every singleton plus seeded random subsets."""
    rng = np.random.default_rng(seed)
    configs: list[IndexConfig] = []
    if include_empty:
        configs.append(EMPTY_CONFIG)
    ordered = sorted(set(candidates))
    configs.extend(IndexConfig.of(ix) for ix in ordered)
    seen = {c.key() for c in configs}
    added = attempts = 0
    while added < n_multi and attempts < 20 * max(n_multi, 1) and len(ordered) >= 2:
        attempts += 1
        size = int(rng.integers(2, min(max_indexes, len(ordered)) + 1))
        pick = rng.choice(len(ordered), size=size, replace=False)
        cfg = IndexConfig(frozenset(ordered[int(i)] for i in pick))
        if cfg.key() not in seen:
            seen.add(cfg.key())
            configs.append(cfg)
            added += 1
    return [(f"cfg{i:03d}", cfg) for i, cfg in enumerate(configs)]


def build_dataset(
    schema: Schema,
    workload: list[Query],
    configs: list[tuple[str, IndexConfig]],
    oracle: CostOracle,
    i0: IndexConfig = EMPTY_CONFIG,
) -> list[Sample]:
    """One sample per (query, config) pair, in fixed (query, config) order."""
    if not workload or not configs:
        raise ValueError("need a nonempty workload and config list")
    samples = []
    for query in workload:
        c0 = true_cost_noiseless(query, i0, oracle.params, schema)
        for config_id, config in configs:
            ci = true_cost_noiseless(query, config, oracle.params, schema)
            benefit = oracle.observed_benefit(query, i0, config)
            samples.append(Sample(query, i0, config, config_id, c0, ci, benefit))
    return samples


def exclude_negative_benefit(samples: list[Sample]) -> list[Sample]:
    """Training-set filter; evaluation sets keep all records."""
    return [s for s in samples if s.benefit >= 0]


@dataclass
class DatasetSplits:
    d_train: list[Sample]
    d_test: list[Sample]
    d_eval: list[Sample]
    held_out_templates: set[int] = field(default_factory=set)
    held_out_columns: set[str] = field(default_factory=set)  # "table.column"

    @property
    def proportions(self) -> tuple[float, float, float]:
        n = len(self.d_train) + len(self.d_test) + len(self.d_eval)
        return (len(self.d_train) / n, len(self.d_test) / n, len(self.d_eval) / n)


def _config_columns(config: IndexConfig) -> set[str]:
    return {f"{ix.table}.{col}" for ix in config.indexes for col in ix.columns}


def split_ood(
    samples: list[Sample],
    seed: int,
    targets: tuple[float, float, float] = (0.50, 0.15, 0.35),
    tolerance: float = 0.05,
) -> DatasetSplits:
    """Route held-out templates/columns to eval, split the rest train/test.

    Held-out sets grow greedily, smallest marginal record count first, until
    the eval share reaches ``targets[2] - tolerance`` without exceeding
    ``targets[2] + tolerance``. Remaining records are shuffled and split at
    the train:test ratio.
    """
    templates = {s.query.template_id for s in samples}
    columns = set().union(*(_config_columns(s.config) for s in samples))
    if len(templates) < 3 or len(columns) < 3:
        raise ValueError("need at least 3 templates and 3 columns to hold out")

    n = len(samples)
    lo, hi = targets[2] - tolerance, targets[2] + tolerance
    sample_template = np.array([s.query.template_id for s in samples])
    sample_cols = [_config_columns(s.config) for s in samples]

    keys: list[tuple[str, object]] = [("template", t) for t in sorted(templates)]
    keys += [("column", c) for c in sorted(columns)]
    matches = {}
    for key in keys:
        kind, value = key
        if kind == "template":
            matches[key] = sample_template == value
        else:
            matches[key] = np.array([value in cols for cols in sample_cols])

    eval_mask = np.zeros(n, dtype=bool)
    held_templates: set[int] = set()
    held_columns: set[str] = set()
    pool = list(keys)
    while eval_mask.mean() < lo:
        best_key, best_marginal = None, None
        for key in pool:
            marginal = int((matches[key] & ~eval_mask).sum())
            if marginal <= 0:
                continue
            if best_marginal is None or marginal < best_marginal:
                best_key, best_marginal = key, marginal
        if best_key is None:
            raise ValueError(
                "cannot reach the eval target: no remaining template/column adds records"
            )
        if (eval_mask.sum() + best_marginal) / n > hi:
            kind, value = best_key
            raise ValueError(
                f"cannot reach the eval target within tolerance: holding out {kind} "
                f"{value!r} would overshoot to "
                f"{(eval_mask.sum() + best_marginal) / n:.2f}"
            )
        eval_mask |= matches[best_key]
        pool.remove(best_key)
        kind, value = best_key
        if kind == "template":
            held_templates.add(value)
        else:
            held_columns.add(value)

    rest = np.flatnonzero(~eval_mask)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(rest))
    n_train = round(len(rest) * targets[0] / (targets[0] + targets[1]))
    train_idx = set(rest[order[:n_train]].tolist())
    d_train, d_test, d_eval = [], [], []
    for i, s in enumerate(samples):
        if eval_mask[i]:
            d_eval.append(s)
        elif i in train_idx:
            d_train.append(s)
        else:
            d_test.append(s)
    return DatasetSplits(d_train, d_test, d_eval, held_templates, held_columns)


# ---------------------------------------------------------------------------
# CSV / JSON persistence

DATASET_HEADER = [
    "query_id",
    "template_id",
    "config_id",
    "index_columns",
    "cost_i0",
    "cost_i",
    "benefit",
    "relative_benefit",
]


def write_dataset_csv(samples: list[Sample], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for s in samples:
            writer.writerow(
                [
                    s.query.id,
                    s.query.template_id,
                    s.config_id,
                    s.config.key(),
                    repr(s.cost_i0),
                    repr(s.cost_i),
                    repr(s.benefit),
                    repr(s.relative_benefit),
                ]
            )


def load_dataset_csv(path, workload: list[Query], i0: IndexConfig = EMPTY_CONFIG) -> list[Sample]:
    by_id = {q.id: q for q in workload}
    samples = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            samples.append(
                Sample(
                    query=by_id[row["query_id"]],
                    i0=i0,
                    config=IndexConfig.from_key(row["index_columns"]),
                    config_id=row["config_id"],
                    cost_i0=float(row["cost_i0"]),
                    cost_i=float(row["cost_i"]),
                    benefit=float(row["benefit"]),
                )
            )
    return samples


def splits_to_dict(splits: DatasetSplits) -> dict:
    return {
        "held_out_templates": sorted(splits.held_out_templates),
        "held_out_columns": sorted(splits.held_out_columns),
        "train": [s.sample_id for s in splits.d_train],
        "test": [s.sample_id for s in splits.d_test],
        "eval": [s.sample_id for s in splits.d_eval],
    }


def splits_from_dict(data: dict, samples: list[Sample]) -> DatasetSplits:
    by_id = {s.sample_id: s for s in samples}
    return DatasetSplits(
        d_train=[by_id[i] for i in data["train"]],
        d_test=[by_id[i] for i in data["test"]],
        d_eval=[by_id[i] for i in data["eval"]],
        held_out_templates=set(data["held_out_templates"]),
        held_out_columns=set(data["held_out_columns"]),
    )
