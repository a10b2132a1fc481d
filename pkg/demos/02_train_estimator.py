#!/usr/bin/env python3
# Train the benefit estimator: build a benefit dataset, encode samples into
# per-slot feature vectors, and run the two-phase training (regression first,
# then the frozen-encoder reconstruction decoder).

import numpy as np

from idxuq.advisor import candidate_indexes
from idxuq.estimator import EstimatorHyper, build_model, train_two_phase
from idxuq.evalkit.dataset import (
    build_dataset,
    configs_from_candidates,
    exclude_negative_benefit,
    split_ood,
)
from idxuq.evalkit.experiment import split_arrays
from idxuq.featurize import FeatureExtractor
from idxuq.synthdb import (
    CostOracle,
    CostOracleParams,
    SchemaSpec,
    generate_schema,
    generate_workload,
    max_touched_slots,
)

##############################################################################
# 1. Dataset: one sample per (query, candidate config)
##############################################################################

schema = generate_schema(SchemaSpec(4, 3, min_rows=2_000, max_rows=200_000), seed=3)
workload = generate_workload(schema, 7, 12, seed=4)
candidates = candidate_indexes(workload, schema, max_width=1)
configs = configs_from_candidates(candidates, seed=5, n_multi=10, max_indexes=2)
oracle = CostOracle(schema, CostOracleParams(noise_sigma=0.1, seed=6))
samples = build_dataset(schema, workload, configs, oracle)
splits = split_ood(samples, seed=7)
print(f"{len(samples)} samples; train/test/eval = "
      + "/".join(f"{p:.0%}" for p in splits.proportions))

##############################################################################
# 2. Features: t slots per sample, categorical column codes one-hot expanded
##############################################################################

extractor = FeatureExtractor(schema, max_touched_slots(workload))
fs = extractor.extract(samples[1].query, samples[1].i0, samples[1].config)
print(f"\nfeature set: t={fs.t}, raw dim {fs.dim1}, embedded dim {fs.dim2}")
print("raw slot 0:", np.round(fs.v1[0], 3))

train_kept = exclude_negative_benefit(splits.d_train)
print(f"training on {len(train_kept)} samples "
      f"({len(splits.d_train) - len(train_kept)} negative-benefit rows excluded)")
arrays = {name: split_arrays(extractor, s) for name, s in
          (("train", train_kept), ("test", splits.d_test))}

##############################################################################
# 3. Two-phase training
##############################################################################

hyper = EstimatorHyper(h=12, phase1_epochs=80, phase2_epochs=100, seed=11)
model = build_model(extractor.t, extractor.dim1, extractor.dim2, hyper)
diag = train_two_phase(
    model,
    arrays["train"].x2,
    arrays["train"].x1.reshape(len(train_kept), -1),
    arrays["train"].targets,
    hyper,
)

p1 = diag.phase1_losses
p2 = diag.phase2_losses
print(f"\nphase 1 (benefit regression) loss: {p1[0]:.4f} -> {p1[-1]:.4f}")
print(f"phase 2 (reconstruction)      loss: {p2[0]:.4f} -> {p2[-1]:.4f}")
frozen = diag.encoder_digest_before_phase2 == diag.encoder_digest_after_phase2
print(f"encoder untouched by phase 2: {frozen}")

##############################################################################
# 4. Held-out accuracy
##############################################################################

test_pred = model.predict_plain(arrays["test"].x2)
err = np.abs(test_pred - arrays["test"].rel_true)
print(f"\ntest relative-benefit error percentiles: "
      f"p50 {np.percentile(err, 50):.3f}, p95 {np.percentile(err, 95):.3f}")
