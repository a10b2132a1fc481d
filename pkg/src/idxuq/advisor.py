"""Budget-constrained greedy index enumeration over pluggable benefit ports.

The enumerator is deliberately dumb and deterministic: candidates are ranked
each round by estimated marginal workload benefit against the current
configuration, ties broken by smaller index size then lexicographic order, so
that A/B runs with different estimator ports differ only in the estimates.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import uq
from .estimator import EstimatorModel
from .featurize import FeatureExtractor
from .synthdb import (
    CostOracleParams,
    Index,
    IndexConfig,
    Query,
    Schema,
    WhatIfParams,
    true_cost_noiseless,
    whatif_estimate,
)

PORT_KINDS = ("oracle", "whatif", "model", "model+filter")


class EstimatorPort:
    """Callable benefit estimator: (query, current config, candidate) -> benefit.

    Subclasses keep call counters so tuning traces can report how much work
    each estimator did.
    """

    kind = "abstract"

    def __init__(self):
        self.calls = 0
        self.whatif_calls = 0

    def __call__(self, query: Query, i0: IndexConfig, i: IndexConfig) -> float:
        self.calls += 1
        return self._estimate(query, i0, i)

    def _estimate(self, query: Query, i0: IndexConfig, i: IndexConfig) -> float:
        raise NotImplementedError


class OraclePort(EstimatorPort):
    """Noiseless ground-truth benefit; the upper bound for any estimator."""

    kind = "oracle"

    def __init__(self, schema: Schema, params: CostOracleParams):
        super().__init__()
        self.schema = schema
        self.params = params

    def _estimate(self, query, i0, i):
        return true_cost_noiseless(query, i0, self.params, self.schema) - true_cost_noiseless(
            query, i, self.params, self.schema
        )


class WhatIfPort(EstimatorPort):
    kind = "whatif"

    def __init__(self, schema: Schema, wp: WhatIfParams, cp: CostOracleParams):
        super().__init__()
        self.schema = schema
        self.wp = wp
        self.cp = cp

    def _estimate(self, query, i0, i):
        self.whatif_calls += 2
        return whatif_estimate(query, i0, self.wp, self.cp, self.schema) - whatif_estimate(
            query, i, self.wp, self.cp, self.schema
        )


class ModelPort(EstimatorPort):
    """Plain learned estimator: relative benefit scaled by the current cost."""

    kind = "model"

    def __init__(
        self,
        model: EstimatorModel,
        extractor: FeatureExtractor,
        schema: Schema,
        cp: CostOracleParams,
    ):
        super().__init__()
        self.model = model
        self.extractor = extractor
        self.schema = schema
        self.cp = cp

    def _estimate(self, query, i0, i):
        fs = self.extractor.extract(query, i0, i)
        rel = float(self.model.predict_plain(fs.v2.reshape(1, -1))[0])
        return rel * true_cost_noiseless(query, i0, self.cp, self.schema)


class FilteredModelPort(EstimatorPort):
    """Learned estimator behind the uncertainty filter, falling back to the
    what-if tool for flagged estimates."""

    kind = "model+filter"

    def __init__(
        self,
        model: EstimatorModel,
        extractor: FeatureExtractor,
        schema: Schema,
        cp: CostOracleParams,
        wp: WhatIfParams,
        mc_seed: int = 0,
    ):
        super().__init__()
        if model.thresholds is None:
            raise ValueError("filtered port requires a model with calibrated thresholds")
        self.model = model
        self.extractor = extractor
        self.schema = schema
        self.cp = cp
        self.wp = wp
        self.config = model.thresholds
        self._rng = np.random.default_rng(mc_seed)
        self.reports: list[uq.UncertaintyReport] = []

    def _estimate(self, query, i0, i):
        fs = self.extractor.extract(query, i0, i)
        blocks, pooled = self.model.encode_batch(fs.v2.reshape(1, -1))
        u1 = uq.recon_error(fs.v1, self.model.reconstruct(blocks[0]))
        if self.config.mode == "u1_only":
            rel = float(self.model.predict_plain(fs.v2.reshape(1, -1))[0])
            u2 = None
        else:
            means, variances, _ = self.model.predict_mc_batch(pooled, rng=self._rng)
            rel, u2 = float(means[0]), float(variances[0])
        c0 = true_cost_noiseless(query, i0, self.cp, self.schema)
        report = uq.apply_filter(
            rel, u1, u2, self.config, lambda: self._whatif_rel(query, i0, i, c0)
        )
        self.reports.append(report)
        return report.prediction * c0

    def _whatif_rel(self, query, i0, i, c0):
        # Denominator matches the scaling cost, so a fallback estimate equals
        # the pure what-if port's absolute estimate.
        self.whatif_calls += 2
        w0 = whatif_estimate(query, i0, self.wp, self.cp, self.schema)
        wi = whatif_estimate(query, i, self.wp, self.cp, self.schema)
        return (w0 - wi) / c0


def workload_benefit(
    workload: list[Query], i0: IndexConfig, i: IndexConfig, port: EstimatorPort
) -> float:
    """Weighted sum of per-query estimated benefits."""
    return sum(q.weight * port(q, i0, i) for q in workload)


def workload_cost_noiseless(
    workload: list[Query], config: IndexConfig, params: CostOracleParams, schema: Schema
) -> float:
    return sum(
        q.weight * true_cost_noiseless(q, config, params, schema) for q in workload
    )


def improvement(
    workload: list[Query],
    i0: IndexConfig,
    chosen: IndexConfig,
    params: CostOracleParams,
    schema: Schema,
) -> float:
    """Relative workload cost reduction, clamped at zero for regressions."""
    base = workload_cost_noiseless(workload, i0, params, schema)
    if base <= 0:
        raise ValueError("baseline workload cost must be positive")
    after = workload_cost_noiseless(workload, chosen, params, schema)
    return max(0.0, 1.0 - after / base)


def candidate_indexes(
    workload: list[Query], schema: Schema, max_width: int = 1
) -> list[Index]:
    """Single- and two-column candidates over the workload's touched columns."""
    if max_width not in (1, 2):
        raise ValueError("max_width must be 1 or 2")
    touched: dict[str, set[str]] = {}
    for q in workload:
        for tc in q.touched:
            touched.setdefault(tc.table, set()).add(tc.column)
    candidates = []
    for table in sorted(touched):
        cols = sorted(touched[table])
        candidates.extend(Index(table, (c,)) for c in cols)
        if max_width == 2:
            candidates.extend(
                Index(table, (a, b)) for a, b in itertools.permutations(cols, 2)
            )
    return sorted(set(candidates))


@dataclass
class TuningRun:
    port_kind: str
    budget_bytes: int
    explored: list[dict] = field(default_factory=list)  # per-round candidate estimates
    steps: list[dict] = field(default_factory=list)  # accepted indexes in order
    chosen: IndexConfig = IndexConfig()
    improvement: float = 0.0
    estimator_calls: int = 0
    whatif_calls: int = 0
    wall_time_s: float = 0.0

    def to_dict(self, schema: Schema) -> dict:
        """Deterministic JSON form; wall time is reported separately because
        it would break byte-identical replays."""
        return {
            "port": self.port_kind,
            "budget_bytes": self.budget_bytes,
            "explored": self.explored,
            "steps": self.steps,
            "chosen": self.chosen.key(),
            "chosen_size_bytes": self.chosen.size_bytes(schema),
            "added_bytes": self.steps[-1]["spent_bytes"] if self.steps else 0,
            "improvement": self.improvement,
            "estimator_calls": self.estimator_calls,
            "whatif_calls": self.whatif_calls,
        }


def enumerate_greedy(
    workload: list[Query],
    i0: IndexConfig,
    candidates: list[Index],
    budget_bytes: int,
    port: EstimatorPort,
    schema: Schema,
    params: CostOracleParams,
    time_limit: float | None = None,
) -> TuningRun:
    """Bottom-up greedy selection under a byte budget.

    Each round estimates the marginal workload benefit of every remaining
    feasible candidate against the current configuration and accepts the best
    strictly positive one. The budget covers indexes added on top of ``i0``.
    """
    if budget_bytes <= 0:
        raise ValueError("budget must be positive")
    started = time.monotonic()
    calls_before, whatif_before = port.calls, port.whatif_calls
    run = TuningRun(port_kind=port.kind, budget_bytes=budget_bytes)
    # Canonical evaluation order fixes tie-breaking independently of the port.
    ordered = sorted(set(candidates) - i0.indexes, key=lambda ix: (ix.size_bytes(schema), ix))
    current = i0
    spent = 0
    while True:
        if time_limit is not None and time.monotonic() - started >= time_limit:
            break
        feasible = [ix for ix in ordered if spent + ix.size_bytes(schema) <= budget_bytes]
        if not feasible:
            break
        round_trace = []
        best_ix, best_benefit = None, 0.0
        for ix in feasible:
            est = workload_benefit(workload, current, current.with_index(ix), port)
            round_trace.append({"candidate": ix.key(), "estimate": est})
            if est > best_benefit:
                best_ix, best_benefit = ix, est
        run.explored.append({"round": len(run.steps), "candidates": round_trace})
        if best_ix is None:
            break
        current = current.with_index(best_ix)
        spent += best_ix.size_bytes(schema)
        run.steps.append(
            {"index": best_ix.key(), "estimate": best_benefit, "spent_bytes": spent}
        )
        ordered.remove(best_ix)
    run.chosen = current
    run.improvement = improvement(workload, i0, current, params, schema)
    run.estimator_calls = port.calls - calls_before
    run.whatif_calls = port.whatif_calls - whatif_before
    run.wall_time_s = time.monotonic() - started
    return run
