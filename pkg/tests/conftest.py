import time
from pathlib import Path
from types import SimpleNamespace

import pytest

from idxuq.evalkit.experiment import load_config, run_experiment

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
    WhatIfParams,
    generate_schema,
    generate_workload,
    max_touched_slots,
)


@pytest.fixture(scope="session")
def small_world():
    """A tiny but complete pipeline input: schema, workload, dataset, splits."""
    schema = generate_schema(SchemaSpec(3, 3, min_rows=1_000, max_rows=100_000), seed=21)
    workload = generate_workload(schema, 5, 10, seed=22, max_touched=2)
    cp = CostOracleParams(noise_sigma=0.05, seed=23)
    wp = WhatIfParams(error_sigma=0.2, seed=24)
    candidates = candidate_indexes(workload, schema, max_width=1)
    configs = configs_from_candidates(candidates, seed=25, n_multi=6, max_indexes=2)
    oracle = CostOracle(schema, cp)
    samples = build_dataset(schema, workload, configs, oracle)
    splits = split_ood(samples, seed=26)
    extractor = FeatureExtractor(schema, max_touched_slots(workload))
    train_kept = exclude_negative_benefit(splits.d_train)
    arrays = {
        "train": split_arrays(extractor, train_kept),
        "test": split_arrays(extractor, splits.d_test),
        "eval": split_arrays(extractor, splits.d_eval),
    }
    return SimpleNamespace(
        schema=schema,
        workload=workload,
        cp=cp,
        wp=wp,
        candidates=candidates,
        configs=configs,
        samples=samples,
        splits=splits,
        extractor=extractor,
        train_kept=train_kept,
        arrays=arrays,
    )


SMALL_HYPER = EstimatorHyper(
    h=8,
    encoder_hidden=(24,),
    predictor_hidden=(16,),
    decoder_hidden=(32,),
    dropout_p=0.1,
    phase1_epochs=60,
    phase2_epochs=80,
    batch_size=32,
    lr1=0.01,
    lr2=0.01,
    seed=31,
)


@pytest.fixture(scope="session")
def small_model(small_world):
    """A two-phase-trained model on the small world, with diagnostics."""
    w = small_world
    model = build_model(w.extractor.t, w.extractor.dim1, w.extractor.dim2, SMALL_HYPER)
    diag = train_two_phase(
        model,
        w.arrays["train"].x2,
        w.arrays["train"].x1.reshape(len(w.train_kept), -1),
        w.arrays["train"].targets,
        SMALL_HYPER,
    )
    return SimpleNamespace(model=model, diag=diag, hyper=SMALL_HYPER)


GOLDEN_CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "golden.toml"


@pytest.fixture(scope="session")
def golden(tmp_path_factory):
    """The seeded regression experiment shared by evalkit and acceptance tests."""
    config = load_config(GOLDEN_CONFIG_PATH)
    outdir = tmp_path_factory.mktemp("golden")
    started = time.monotonic()
    result = run_experiment(config, outdir)
    return SimpleNamespace(
        config=config, result=result, outdir=outdir,
        runtime_s=time.monotonic() - started,
    )
