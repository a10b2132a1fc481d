"""Shared test utilities: independent oracles and tiny fixtures."""

from __future__ import annotations

import itertools

import numpy as np

from idxuq.advisor import improvement
from idxuq.neural import DenseNet
from idxuq.synthdb import (
    Column,
    CostOracleParams,
    IndexConfig,
    Query,
    Schema,
    Table,
    TouchedColumn,
)


def mse_loss(net: DenseNet, x, target) -> float:
    pred = net.forward(x, mode="infer_plain")
    return float(np.mean((pred - np.atleast_2d(target)) ** 2))


def fd_gradients(net: DenseNet, x, target, eps: float = 1e-5):
    """Central-difference gradients of the MSE loss, dropout off.

    Independent of the backprop path: perturbs every parameter in place and
    re-evaluates the loss.
    """
    grads = []
    for layer in net.layers:
        dw = np.zeros_like(layer.w)
        for idx in np.ndindex(*layer.w.shape):
            orig = layer.w[idx]
            layer.w[idx] = orig + eps
            up = mse_loss(net, x, target)
            layer.w[idx] = orig - eps
            down = mse_loss(net, x, target)
            layer.w[idx] = orig
            dw[idx] = (up - down) / (2 * eps)
        db = np.zeros_like(layer.b)
        for idx in np.ndindex(*layer.b.shape):
            orig = layer.b[idx]
            layer.b[idx] = orig + eps
            up = mse_loss(net, x, target)
            layer.b[idx] = orig - eps
            down = mse_loss(net, x, target)
            layer.b[idx] = orig
            db[idx] = (up - down) / (2 * eps)
        grads.append((dw, db))
    return grads


def max_rel_grad_error(analytic, numeric, floor: float = 1e-3) -> float:
    worst = 0.0
    for (aw, ab), (nw, nb) in zip(analytic, numeric):
        for a, n in ((aw, nw), (ab, nb)):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def single_table_schema(rows: int = 1000, distinct: int = 100) -> Schema:
    return Schema(
        (
            Table(
                "t0",
                rows,
                (Column("c0", min(distinct, rows), 8), Column("c1", min(distinct, rows), 4)),
            ),
        )
    )


def simple_query(selectivity: float = 0.1, qid: str = "q0", weight: float = 1.0) -> Query:
    return Query(qid, 0, (TouchedColumn("t0", "c0", selectivity),), (), weight)


def unit_cost_params(**kwargs) -> CostOracleParams:
    defaults = dict(scan_cost_per_row=1.0, index_benefit_exponent=1.0, noise_sigma=0.0, seed=0)
    defaults.update(kwargs)
    return CostOracleParams(**defaults)


def brute_force_best_improvement(workload, i0, candidates, budget, schema, params):
    """Exhaustive subset search; the independent optimum oracle for greedy."""
    best = 0.0
    for r in range(len(candidates) + 1):
        for combo in itertools.combinations(candidates, r):
            size = sum(ix.size_bytes(schema) for ix in combo)
            if size > budget:
                continue
            config = IndexConfig(i0.indexes | set(combo))
            best = max(best, improvement(workload, i0, config, params, schema))
    return best


def tiny_config_dict(seed: int = 11, **overrides) -> dict:
    """A sub-second end-to-end experiment config for pipeline tests."""
    data = {
        "seed": seed,
        "schema": {"n_tables": 3, "columns_per_table": 3, "min_rows": 1000, "max_rows": 50000},
        "workload": {"n_templates": 5, "n_queries_per_template": 6, "max_touched": 2},
        "oracle": {"noise_sigma": 0.05, "seed": 41},
        "whatif": {"error_sigma": 0.5, "seed": 42},
        "candidates": {"max_width": 1},
        "configs": {"n_multi": 8, "max_indexes": 2},
        "model": {"hyper_draws": 2, "phase1_epochs": 40, "phase2_epochs": 50},
        "ensemble": {"k": 2},
        "tuning": {"budgets_pct": [5, 10, 20], "workload": "full"},
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    return data
