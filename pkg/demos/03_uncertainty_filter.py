#!/usr/bin/env python3
# Uncertainty quantification end to end: reconstruction error and MC-dropout
# variance per sample, IQR threshold calibration on the training set, the
# result filter with a what-if fallback, and the drift signal that tells an
# operator when (and how) to refresh the model.

import numpy as np

from idxuq import uq
from idxuq.advisor import candidate_indexes
from idxuq.estimator import EstimatorHyper, build_model, train_two_phase
from idxuq.evalkit.baselines import model_uncertainties
from idxuq.evalkit.dataset import (
    build_dataset,
    configs_from_candidates,
    exclude_negative_benefit,
    split_ood,
)
from idxuq.evalkit.experiment import split_arrays, whatif_rel_estimates
from idxuq.evalkit.metrics import be_errors, unreliable_recall
from idxuq.featurize import FeatureExtractor
from idxuq.synthdb import (
    CostOracle,
    CostOracleParams,
    SchemaSpec,
    WhatIfParams,
    generate_schema,
    generate_workload,
    max_touched_slots,
)

##############################################################################
# 1. Data, model, and the out-of-distribution split
##############################################################################

schema = generate_schema(SchemaSpec(5, 4, min_rows=2_000, max_rows=300_000), seed=3)
workload = generate_workload(schema, 9, 15, seed=4)
candidates = candidate_indexes(workload, schema, max_width=2)
configs = configs_from_candidates(candidates, seed=5, n_multi=20, max_indexes=3)
cp = CostOracleParams(noise_sigma=0.1, seed=6)
samples = build_dataset(schema, workload, configs, CostOracle(schema, cp))
splits = split_ood(samples, seed=7)
print(f"{len(samples)} samples; held-out templates {sorted(splits.held_out_templates)}, "
      f"held-out columns {sorted(splits.held_out_columns)}")

extractor = FeatureExtractor(schema, max_touched_slots(workload))
train_kept = exclude_negative_benefit(splits.d_train)
arrays = {
    "train": split_arrays(extractor, train_kept),
    "test": split_arrays(extractor, splits.d_test),
    "eval": split_arrays(extractor, splits.d_eval),
}
hyper = EstimatorHyper(h=16, phase1_epochs=100, phase2_epochs=120, seed=11)
model = build_model(extractor.t, extractor.dim1, extractor.dim2, hyper)
train_two_phase(model, arrays["train"].x2,
                arrays["train"].x1.reshape(len(train_kept), -1),
                arrays["train"].targets, hyper)

##############################################################################
# 2. Per-sample uncertainties and IQR calibration on the training set
##############################################################################

u1, mc_mean, mc_var = model_uncertainties(model, arrays, seed=13)
model.thresholds = uq.calibrate_filter(u1["train"], mc_var["train"], alpha=1.3)
print(f"\nthresholds: reconstruction {model.thresholds.theta1:.4f} "
      f"(train max {model.thresholds.stats1['max']:.4f}), "
      f"variance {model.thresholds.theta2:.6f}")

for split in ("train", "eval"):
    print(f"  {split}: median u1 {np.median(u1[split]):.4f}, "
          f"median u2 {np.median(mc_var[split]):.6f}")

##############################################################################
# 3. The result filter in action
##############################################################################

wp = WhatIfParams(error_sigma=0.05, seed=17)
whatif_rel = whatif_rel_estimates(splits.d_eval, wp, cp, schema)
reports = []
for i in range(len(splits.d_eval)):
    report = uq.apply_filter(
        float(mc_mean["eval"][i]), float(u1["eval"][i]), float(mc_var["eval"][i]),
        model.thresholds, lambda i=i: float(whatif_rel[i]),
    )
    reports.append(report)
fallback = sum(r.source == "whatif" for r in reports)
print(f"\nfilter on eval: {fallback}/{len(reports)} estimates routed to what-if")

##############################################################################
# 4. Does flagging find the actually-bad estimates?
##############################################################################

own_train = be_errors(mc_mean["train"], arrays["train"].rel_true)
own_eval = be_errors(mc_mean["eval"], arrays["eval"].rel_true)
flags = np.array([r.source == "whatif" for r in reports])
recall = unreliable_recall(flags, own_train, own_eval)
print(f"unreliable-sample recall on the out-of-distribution split: {recall:.2f}")

composed = np.array([r.prediction for r in reports])
for name, preds in (("model alone", mc_mean["eval"]), ("filtered", composed)):
    p95 = np.percentile(be_errors(preds, arrays["eval"].rel_true), 95)
    print(f"  p95 benefit error, {name}: {p95:.3f}")

##############################################################################
# 5. Drift signals from a monitoring window
##############################################################################

window = reports[-uq.DEFAULT_WINDOW:]
signal = uq.update_signal(window, fraction_threshold=uq.DEFAULT_FRACTION)
print(f"\nupdate signal over the last {len(window)} reports: {signal}")
print("  (retrain_data: collect data for the new workload; "
      "redesign_features: the inputs no longer separate the outcomes)")
