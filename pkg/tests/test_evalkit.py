import json

import numpy as np
import pytest

from idxuq.estimator import EstimatorHyper
from idxuq.evalkit.baselines import evaluate_methods, train_ensemble
from idxuq.evalkit.dataset import (
    build_dataset,
    configs_from_candidates,
    exclude_negative_benefit,
    load_dataset_csv,
    split_ood,
    splits_from_dict,
    splits_to_dict,
    write_dataset_csv,
)
from idxuq.evalkit.experiment import (
    ConfigError,
    ExperimentConfig,
    load_config,
    run_experiment,
)
from idxuq.evalkit.metrics import (
    be_errors,
    error_percentiles,
    unreliable_recall,
    unreliable_threshold,
)
from idxuq.synthdb import (
    EMPTY_CONFIG,
    CostOracle,
    Index,
    SchemaSpec,
    generate_schema,
    generate_workload,
)

from .helpers import tiny_config_dict, unit_cost_params


class TestBuildDataset:
    def make_inputs(self, noise=0.0):
        schema = generate_schema(SchemaSpec(2, 2, min_rows=100, max_rows=1000), seed=1)
        workload = generate_workload(schema, 2, 5, seed=2, max_touched=2)
        candidates = [
            Index(t.name, (c.name,)) for t in schema.tables for c in t.columns
        ]
        configs = configs_from_candidates(candidates, seed=3, n_multi=0)
        oracle = CostOracle(schema, unit_cost_params(noise_sigma=noise, seed=4))
        return schema, workload, configs, oracle

    def test_cross_product_count(self):
        schema, workload, configs, oracle = self.make_inputs()
        samples = build_dataset(schema, workload, configs, oracle)
        assert len(samples) == len(workload) * len(configs)

    def test_baseline_rows_zero_benefit_when_noiseless(self):
        schema, workload, configs, oracle = self.make_inputs(noise=0.0)
        samples = build_dataset(schema, workload, configs, oracle)
        for s in samples:
            if s.config == EMPTY_CONFIG:
                assert s.benefit == 0.0
                assert s.rel_true == 0.0

    def test_deterministic_under_fixed_seed(self):
        schema, workload, configs, _ = self.make_inputs(noise=0.2)
        a = build_dataset(schema, workload, configs,
                          CostOracle(schema, unit_cost_params(noise_sigma=0.2, seed=4)))
        b = build_dataset(schema, workload, configs,
                          CostOracle(schema, unit_cost_params(noise_sigma=0.2, seed=4)))
        assert [s.benefit for s in a] == [s.benefit for s in b]

    def test_empty_inputs_rejected(self):
        schema, workload, configs, oracle = self.make_inputs()
        with pytest.raises(ValueError):
            build_dataset(schema, [], configs, oracle)
        with pytest.raises(ValueError):
            build_dataset(schema, workload, [], oracle)

    def test_exclude_negative_benefit(self):
        schema, workload, configs, oracle = self.make_inputs(noise=0.3)
        samples = build_dataset(schema, workload, configs, oracle)
        kept = exclude_negative_benefit(samples)
        assert all(s.benefit >= 0 for s in kept)
        assert len(kept) < len(samples)  # noise produces some negatives

    def test_csv_roundtrip(self, tmp_path):
        schema, workload, configs, oracle = self.make_inputs(noise=0.1)
        samples = build_dataset(schema, workload, configs, oracle)
        path = tmp_path / "dataset.csv"
        write_dataset_csv(samples, path)
        loaded = load_dataset_csv(path, workload)
        assert len(loaded) == len(samples)
        for a, b in zip(samples, loaded):
            assert a.query.id == b.query.id
            assert a.config == b.config
            assert a.benefit == b.benefit
            assert a.cost_i0 == b.cost_i0


class TestSplitOod:
    def make_samples(self):
        schema = generate_schema(SchemaSpec(3, 3, min_rows=500, max_rows=20_000), seed=5)
        workload = generate_workload(schema, 6, 8, seed=6, max_touched=2)
        candidates = [Index(t.name, (c.name,)) for t in schema.tables for c in t.columns]
        configs = configs_from_candidates(candidates, seed=7, n_multi=5, max_indexes=2)
        oracle = CostOracle(schema, unit_cost_params(noise_sigma=0.05, seed=8))
        return build_dataset(schema, workload, configs, oracle)

    def test_partition_and_proportions(self):
        samples = self.make_samples()
        splits = split_ood(samples, seed=9)
        ids = [s.sample_id for s in splits.d_train + splits.d_test + splits.d_eval]
        assert len(ids) == len(samples)
        assert len(set(ids)) == len(ids)
        p_train, p_test, p_eval = splits.proportions
        assert abs(p_train - 0.50) <= 0.05
        assert abs(p_test - 0.15) <= 0.05
        assert abs(p_eval - 0.35) <= 0.05

    def test_eval_samples_match_held_out_keys(self):
        samples = self.make_samples()
        splits = split_ood(samples, seed=9)
        for s in splits.d_eval:
            cols = {f"{ix.table}.{c}" for ix in s.config.indexes for c in ix.columns}
            assert (
                s.query.template_id in splits.held_out_templates
                or cols & splits.held_out_columns
            )
        # and nothing held out leaks into train/test
        for s in splits.d_train + splits.d_test:
            cols = {f"{ix.table}.{c}" for ix in s.config.indexes for c in ix.columns}
            assert s.query.template_id not in splits.held_out_templates
            assert not cols & splits.held_out_columns

    def test_same_seed_identical(self):
        samples = self.make_samples()
        a = split_ood(samples, seed=9)
        b = split_ood(samples, seed=9)
        assert [s.sample_id for s in a.d_train] == [s.sample_id for s in b.d_train]
        assert [s.sample_id for s in a.d_eval] == [s.sample_id for s in b.d_eval]

    def test_too_few_templates_rejected(self):
        samples = [s for s in self.make_samples() if s.query.template_id < 2]
        with pytest.raises(ValueError):
            split_ood(samples, seed=9)

    def test_infeasible_tolerance_names_blocker(self):
        samples = self.make_samples()
        with pytest.raises(ValueError, match="holding out"):
            split_ood(samples, seed=9, tolerance=1e-6)

    def test_splits_roundtrip(self):
        samples = self.make_samples()
        splits = split_ood(samples, seed=9)
        clone = splits_from_dict(splits_to_dict(splits), samples)
        assert [s.sample_id for s in clone.d_eval] == [s.sample_id for s in splits.d_eval]
        assert clone.held_out_templates == splits.held_out_templates
        assert clone.held_out_columns == splits.held_out_columns


class TestMetrics:
    def test_recall_all_flagged(self):
        train_err = np.linspace(0, 1, 100)
        eval_err = np.array([2.0, 3.0, 0.0])
        flags = np.array([True, True, True])
        assert unreliable_recall(flags, train_err, eval_err) == 1.0

    def test_recall_none_flagged(self):
        train_err = np.linspace(0, 1, 100)
        eval_err = np.array([2.0, 3.0])
        flags = np.array([False, False])
        assert unreliable_recall(flags, train_err, eval_err) == 0.0

    def test_recall_not_applicable(self):
        train_err = np.linspace(0, 1, 100)
        eval_err = np.array([0.0, 0.1])
        assert unreliable_recall(np.array([True, True]), train_err, eval_err) is None

    def test_threshold_is_p90(self):
        train_err = np.arange(11.0)
        assert unreliable_threshold(train_err) == pytest.approx(9.0)

    def test_percentiles_monotone(self):
        pct = error_percentiles(np.random.default_rng(0).random(500))
        assert pct["p50"] <= pct["p95"] <= pct["p99"]

    def test_be_errors_shape_checked(self):
        with pytest.raises(ValueError):
            be_errors(np.ones(3), np.ones(4))


class TestEnsemble:
    def test_members_differ_by_seed(self, small_world):
        w = small_world
        hyper = EstimatorHyper(h=6, encoder_hidden=(12,), predictor_hidden=(8,),
                               phase1_epochs=10, seed=1)
        members = train_ensemble(
            hyper, w.extractor.t, w.extractor.dim1, w.extractor.dim2,
            w.arrays["train"].x2, w.arrays["train"].targets, k=3, seed=50,
        )
        preds = np.stack([m.predict_plain(w.arrays["eval"].x2) for m in members])
        assert preds.var(axis=0).mean() > 0.0

    def test_identical_seeds_degenerate(self, small_world):
        w = small_world
        hyper = EstimatorHyper(h=6, encoder_hidden=(12,), predictor_hidden=(8,),
                               phase1_epochs=5, seed=1)
        twice = [
            train_ensemble(
                hyper, w.extractor.t, w.extractor.dim1, w.extractor.dim2,
                w.arrays["train"].x2, w.arrays["train"].targets, k=1, seed=50,
            )[0]
            for _ in range(2)
        ]
        preds = np.stack([m.predict_plain(w.arrays["eval"].x2) for m in twice])
        assert np.array_equal(preds[0], preds[1])
        assert preds.var(axis=0).max() == 0.0

    def test_k1_mean_equals_single_model(self, small_world):
        w = small_world
        hyper = EstimatorHyper(h=6, encoder_hidden=(12,), predictor_hidden=(8,),
                               phase1_epochs=5, seed=1)
        (member,) = train_ensemble(
            hyper, w.extractor.t, w.extractor.dim1, w.extractor.dim2,
            w.arrays["train"].x2, w.arrays["train"].targets, k=1, seed=50,
        )
        preds = np.stack([member.predict_plain(w.arrays["eval"].x2)])
        assert np.array_equal(preds.mean(axis=0), member.predict_plain(w.arrays["eval"].x2))

    def test_variance_invariant_under_member_order(self, small_world):
        w = small_world
        hyper = EstimatorHyper(h=6, encoder_hidden=(12,), predictor_hidden=(8,),
                               phase1_epochs=5, seed=1)
        members = train_ensemble(
            hyper, w.extractor.t, w.extractor.dim1, w.extractor.dim2,
            w.arrays["train"].x2, w.arrays["train"].targets, k=3, seed=50,
        )
        preds = np.stack([m.predict_plain(w.arrays["eval"].x2) for m in members])
        assert np.allclose(preds.var(axis=0), preds[::-1].var(axis=0))

    def test_k_below_two_rejected(self, small_world, small_model):
        with pytest.raises(ValueError):
            evaluate_methods(
                small_model.model, small_world.arrays, small_model.hyper, k=1
            )


class TestConfig:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            ExperimentConfig.from_dict({"bogus": 1})

    def test_unknown_nested_key_reports_path(self):
        with pytest.raises(ConfigError, match=r"schema\.rows"):
            ExperimentConfig.from_dict({"schema": {"rows": 5}})

    def test_bad_value_reports_section(self):
        with pytest.raises(ConfigError, match="tuning"):
            ExperimentConfig.from_dict({"tuning": {"workload": "everything"}})

    def test_load_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(tiny_config_dict()))
        cfg = load_config(path)
        assert cfg.workload.n_templates == 5

    def test_load_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('seed = 4\n[schema]\nn_tables = 2\n')
        cfg = load_config(path)
        assert cfg.seed == 4
        assert cfg.schema.n_tables == 2

    def test_unknown_extension(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("seed: 4")
        with pytest.raises(ConfigError):
            load_config(path)


class TestRunExperiment:
    def test_artifacts_and_determinism(self, tmp_path):
        cfg = ExperimentConfig.from_dict(tiny_config_dict(seed=11))
        res_a = run_experiment(cfg, tmp_path / "a")
        res_b = run_experiment(cfg, tmp_path / "b")
        assert res_a.metrics.to_dict() == res_b.metrics.to_dict()
        expected = {
            "schema.json", "workload.json", "dataset.csv", "splits.json",
            "model.json", "metrics.json", "uncertainties.csv", "errors.csv",
            "reports.csv", "timing.json",
        }
        names = {p.name for p in (tmp_path / "a").iterdir()}
        assert expected <= names
        tuning = [n for n in names if n.startswith("tuning_")]
        assert len(tuning) == 4 * 3  # ports x budgets

    def test_ood_baseline_starts_with_held_out_indexes(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            tiny_config_dict(seed=11, tuning={"baseline": "ood", "budgets_pct": [10]})
        )
        res = run_experiment(cfg, tmp_path / "ood_base")
        held = res.splits.held_out_columns
        for run in res.runs:
            start = run.chosen.indexes - {
                ix for step in run.steps
                for ix in run.chosen.indexes if ix.key() == step["index"]
            }
            for ix in start:
                cols = {f"{ix.table}.{c}" for c in ix.columns}
                assert cols & held

    def test_oracle_port_dominates_whatif_on_golden_mini(self, tmp_path):
        cfg = ExperimentConfig.from_dict(tiny_config_dict(seed=12))
        res = run_experiment(cfg, tmp_path / "mini")
        imp = res.metrics.improvement
        for budget in imp["oracle"]:
            assert imp["oracle"][budget] >= imp["whatif"][budget]
        # strict somewhere: the noisy what-if does lose part of the benefit
        assert any(imp["oracle"][b] > imp["whatif"][b] for b in imp["oracle"])

    def test_hybrid_recall_dominates_cheap_mode_on_common_basis(self, golden):
        # Flags in hybrid mode contain the cheap mode's flags, so on any one
        # unreliable set the hybrid recall cannot be lower.
        res = golden.result
        hybrid = res.methods["hybrid"]
        ae = res.methods["ae"]
        own_train = be_errors(hybrid.predictions["train"], res.arrays["train"].rel_true)
        own_eval = be_errors(hybrid.predictions["eval"], res.arrays["eval"].rel_true)
        r_hybrid = unreliable_recall(hybrid.flags["eval"], own_train, own_eval)
        r_ae = unreliable_recall(ae.flags["eval"], own_train, own_eval)
        assert r_hybrid >= r_ae

    def test_metrics_validate_on_golden(self, golden):
        golden.result.metrics.validate()
        pct = golden.result.metrics.error_percentiles
        assert set(pct) == {"model", "whatif", "hybrid", "ae", "mcd", "ensemble"}

    def test_train_flag_rate_reported(self, golden):
        rates = golden.result.metrics.train_flag_rate
        assert set(rates) == {"hybrid", "ae", "mcd", "ensemble"}
        for rate in rates.values():
            assert 0.0 <= rate <= 1.0

    def test_filter_reports_consistent(self, golden):
        path = golden.outdir / "reports.csv"
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "sample_id,yhat,u1,u2,flag_u1,flag_u2,source"
        n_eval = len(golden.result.splits.d_eval)
        assert len(lines) == n_eval + 1
        sources = {line.rsplit(",", 1)[1] for line in lines[1:]}
        assert sources <= {"model", "whatif"}

    def test_fallback_fraction_matches_flags(self, golden):
        res = golden.result
        frac = res.metrics.fallback_fraction["hybrid"]
        assert frac == pytest.approx(res.methods["hybrid"].flags["eval"].mean())
