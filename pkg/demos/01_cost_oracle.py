#!/usr/bin/env python3
# Synthetic database substrate: generate a schema and a templated workload,
# price queries with the analytic cost oracle, and compare against the
# deterministic-but-biased what-if estimator.

import numpy as np

from idxuq.synthdb import (
    EMPTY_CONFIG,
    CostOracle,
    CostOracleParams,
    Index,
    IndexConfig,
    SchemaSpec,
    WhatIfParams,
    generate_schema,
    generate_workload,
    true_cost_noiseless,
    whatif_estimate,
)

##############################################################################
# 1. A schema and a workload, fully determined by seeds
##############################################################################

schema = generate_schema(SchemaSpec(n_tables=4, columns_per_table=3), seed=7)
workload = generate_workload(schema, n_templates=6, n_queries_per_template=5, seed=8)

print("tables:")
for table in schema.tables:
    cols = ", ".join(f"{c.name}(w={c.width_bytes})" for c in table.columns)
    print(f"  {table.name}: {table.row_count:>9,} rows | {cols}")
print(f"\nworkload: {len(workload)} queries from 6 templates")
q = workload[0]
print(f"example query {q.id} (template {q.template_id}, weight {q.weight:.2f}):")
for tc in q.touched:
    print(f"  touches {tc.table}.{tc.column} with selectivity {tc.selectivity:.4f}")

##############################################################################
# 2. Costs with and without an index
##############################################################################

params = CostOracleParams(scan_cost_per_row=1.0, index_benefit_exponent=1.0)
tc = q.touched[0]
index = Index(tc.table, (tc.column,))
config = IndexConfig.of(index)

base = true_cost_noiseless(q, EMPTY_CONFIG, params, schema)
indexed = true_cost_noiseless(q, config, params, schema)
print(f"\nnoiseless cost without index: {base:,.0f}")
print(f"noiseless cost with {index.key()}: {indexed:,.0f}")
print(f"index size: {index.size_bytes(schema):,} bytes")

##############################################################################
# 3. Execution noise: observed benefits vary across runs
##############################################################################

noisy = CostOracle(schema, CostOracleParams(noise_sigma=0.1, seed=42))
benefits = [noisy.observed_benefit(q, EMPTY_CONFIG, config) for _ in range(500)]
print(f"\nobserved benefit over 500 noisy runs: mean {np.mean(benefits):,.0f}, "
      f"std {np.std(benefits):,.0f} (true {base - indexed:,.0f})")

##############################################################################
# 4. The what-if estimator: frozen error per (query, config)
##############################################################################

wp = WhatIfParams(bias_factor=1.0, error_sigma=0.3, seed=5)
est1 = whatif_estimate(q, config, wp, params, schema)
est2 = whatif_estimate(q, config, wp, params, schema)
print(f"\nwhat-if cost estimate: {est1:,.0f} (truth {indexed:,.0f}); "
      f"repeated call identical: {est1 == est2}")
