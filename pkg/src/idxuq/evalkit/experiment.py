"""End-to-end experiment harness.

One seeded config drives the whole pipeline: synthesize schema/workload,
build the benefit dataset, split it with held-out templates and columns,
train and calibrate the estimator, score every uncertainty quantifier, and
run budget-constrained tuning once per (estimator port, budget) cell.

All artifacts written under the run directory are byte-stable across reruns
of the same config; wall-clock measurements go to a separate ``timing.json``
that is excluded from that guarantee.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import uq
from ..advisor import (
    PORT_KINDS,
    EstimatorPort,
    FilteredModelPort,
    ModelPort,
    OraclePort,
    TuningRun,
    WhatIfPort,
    candidate_indexes,
    enumerate_greedy,
)
from ..estimator import (
    EstimatorHyper,
    EstimatorModel,
    TrainDiagnostics,
    save_model,
    train_best,
)
from ..featurize import FeatureExtractor
from ..synthdb import (
    EMPTY_CONFIG,
    CostOracle,
    CostOracleParams,
    Index,
    IndexConfig,
    Query,
    Schema,
    SchemaSpec,
    WhatIfParams,
    dump_json,
    generate_schema,
    generate_workload,
    max_touched_slots,
    schema_to_dict,
    whatif_estimate,
    workload_to_dict,
)
from .baselines import SPLITS, MethodEval, SplitArrays, evaluate_methods
from .dataset import (
    DatasetSplits,
    Sample,
    build_dataset,
    configs_from_candidates,
    exclude_negative_benefit,
    split_ood,
    splits_to_dict,
    write_dataset_csv,
)
from .metrics import MetricsReport, be_errors, error_percentiles, unreliable_recall


class ConfigError(ValueError):
    pass


def _section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            value = data[f.name]
            if isinstance(f.default, tuple) and isinstance(value, list):
                value = tuple(value)
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class SchemaSection:
    n_tables: int = 4
    columns_per_table: int = 4
    min_rows: int = 2_000
    max_rows: int = 500_000


@dataclass(frozen=True)
class WorkloadSection:
    n_templates: int = 8
    n_queries_per_template: int = 25
    max_touched: int = 3


@dataclass(frozen=True)
class OracleSection:
    scan_cost_per_row: float = 1.0
    index_benefit_exponent: float = 1.0
    noise_sigma: float = 0.1
    seed: int = 101


@dataclass(frozen=True)
class WhatIfSection:
    bias_factor: float = 1.0
    error_sigma: float = 0.25
    seed: int = 202


@dataclass(frozen=True)
class CandidatesSection:
    max_width: int = 2


@dataclass(frozen=True)
class ConfigsSection:
    n_multi: int = 30
    max_indexes: int = 3
    include_empty: bool = True


@dataclass(frozen=True)
class SplitSection:
    targets: tuple[float, float, float] = (0.50, 0.15, 0.35)
    tolerance: float = 0.05

    def __post_init__(self) -> None:
        if len(self.targets) != 3 or abs(sum(self.targets) - 1.0) > 1e-9:
            raise ValueError("split targets must be three fractions summing to 1")


@dataclass(frozen=True)
class ModelSection:
    hyper_draws: int = 3
    mc_passes: int = 20
    dropout_p: float = 0.1
    phase1_epochs: int = 150
    phase2_epochs: int = 200
    batch_size: int = 32
    lr1: float = 0.01
    lr2: float = 0.01
    momentum: float = 0.9


@dataclass(frozen=True)
class FilterSection:
    alpha: float = uq.DEFAULT_ALPHA
    mode: str = "hybrid"

    def __post_init__(self) -> None:
        if self.mode not in uq.MODES:
            raise ValueError(f"mode must be one of {uq.MODES}")


@dataclass(frozen=True)
class EnsembleSection:
    k: int = 5


@dataclass(frozen=True)
class TuningSection:
    budgets_pct: tuple[float, ...] = (5.0, 10.0, 20.0)
    budgets_bytes: tuple[int, ...] = ()  # absolute budgets; override budgets_pct when set
    ports: tuple[str, ...] = ("oracle", "whatif", "model", "model+filter")
    time_limit: float | None = None
    workload: str = "full"  # which queries the advisor tunes: full | ood | train
    baseline: str = "empty"  # starting config: empty | ood (indexes held-out columns)

    def __post_init__(self) -> None:
        if self.workload not in ("full", "ood", "train"):
            raise ValueError("tuning workload must be full, ood, or train")
        if self.baseline not in ("empty", "ood"):
            raise ValueError("tuning baseline must be empty or ood")
        for port in self.ports:
            if port not in PORT_KINDS:
                raise ValueError(f"unknown port {port!r}")

    def budgets(self, total_bytes: int) -> list[tuple[str, int]]:
        """(label, bytes) pairs; labels name the tuning output files."""
        if self.budgets_bytes:
            return [(f"{b}B", int(b)) for b in self.budgets_bytes]
        return [(f"{p:g}", int(total_bytes * p / 100)) for p in self.budgets_pct]


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    schema: SchemaSection = SchemaSection()
    workload: WorkloadSection = WorkloadSection()
    oracle: OracleSection = OracleSection()
    whatif: WhatIfSection = WhatIfSection()
    candidates: CandidatesSection = CandidatesSection()
    configs: ConfigsSection = ConfigsSection()
    split: SplitSection = SplitSection()
    model: ModelSection = ModelSection()
    filter: FilterSection = FilterSection()
    ensemble: EnsembleSection = EnsembleSection()
    tuning: TuningSection = TuningSection()

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a mapping")
        sections = {
            "schema": SchemaSection,
            "workload": WorkloadSection,
            "oracle": OracleSection,
            "whatif": WhatIfSection,
            "candidates": CandidatesSection,
            "configs": ConfigsSection,
            "split": SplitSection,
            "model": ModelSection,
            "filter": FilterSection,
            "ensemble": EnsembleSection,
            "tuning": TuningSection,
        }
        kwargs = {}
        for key, value in data.items():
            if key == "seed":
                if not isinstance(value, int):
                    raise ConfigError("seed: expected an integer")
                kwargs["seed"] = value
            elif key in sections:
                kwargs[key] = _section(sections[key], value, key)
            else:
                raise ConfigError(f"{key}: unknown key")
        return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Read an experiment config from a .json or .toml file."""
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    elif path.suffix == ".json":
        with open(path) as fh:
            data = json.load(fh)
    else:
        raise ConfigError(f"config file must be .json or .toml, got {path.suffix!r}")
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# Pipeline pieces (shared by run_experiment and the CLI)


def make_schema(config: ExperimentConfig) -> Schema:
    spec = SchemaSpec(
        n_tables=config.schema.n_tables,
        columns_per_table=config.schema.columns_per_table,
        min_rows=config.schema.min_rows,
        max_rows=config.schema.max_rows,
    )
    return generate_schema(spec, seed=config.seed)


def make_workload(config: ExperimentConfig, schema: Schema) -> list[Query]:
    return generate_workload(
        schema,
        config.workload.n_templates,
        config.workload.n_queries_per_template,
        seed=config.seed + 1,
        max_touched=config.workload.max_touched,
    )


def cost_params(config: ExperimentConfig) -> CostOracleParams:
    return CostOracleParams(
        scan_cost_per_row=config.oracle.scan_cost_per_row,
        index_benefit_exponent=config.oracle.index_benefit_exponent,
        noise_sigma=config.oracle.noise_sigma,
        seed=config.oracle.seed,
    )


def whatif_params(config: ExperimentConfig) -> WhatIfParams:
    return WhatIfParams(
        bias_factor=config.whatif.bias_factor,
        error_sigma=config.whatif.error_sigma,
        seed=config.whatif.seed,
    )


def base_hyper(config: ExperimentConfig) -> EstimatorHyper:
    m = config.model
    return EstimatorHyper(
        mc_passes=m.mc_passes,
        dropout_p=m.dropout_p,
        phase1_epochs=m.phase1_epochs,
        phase2_epochs=m.phase2_epochs,
        batch_size=m.batch_size,
        lr1=m.lr1,
        lr2=m.lr2,
        momentum=m.momentum,
        seed=config.seed,
    )


def split_arrays(extractor: FeatureExtractor, samples: list[Sample]) -> SplitArrays:
    n = len(samples)
    x2 = np.empty((n, extractor.t * extractor.dim2))
    x1 = np.empty((n, extractor.t, extractor.dim1))
    for i, s in enumerate(samples):
        fs = extractor.extract(s.query, s.i0, s.config)
        x2[i] = fs.v2.reshape(-1)
        x1[i] = fs.v1
    return SplitArrays(
        x2=x2,
        x1=x1,
        targets=np.array([s.relative_benefit for s in samples]),
        rel_true=np.array([s.rel_true for s in samples]),
        sample_ids=[s.sample_id for s in samples],
    )


def whatif_rel_estimates(
    samples: list[Sample], wp: WhatIfParams, cp: CostOracleParams, schema: Schema
) -> np.ndarray:
    """Per-sample what-if benefit estimates, relative to the true base cost."""
    out = np.empty(len(samples))
    for i, s in enumerate(samples):
        w0 = whatif_estimate(s.query, s.i0, wp, cp, schema)
        wi = whatif_estimate(s.query, s.config, wp, cp, schema)
        out[i] = (w0 - wi) / s.cost_i0
    return out


def ood_baseline_config(
    splits: DatasetSplits, candidates: list[Index], schema: Schema
) -> IndexConfig:
    """A starting configuration indexing held-out columns: a drift scenario
    the estimator never saw as the current config during training."""
    picked = []
    for ix in sorted(set(candidates)):
        cols = {f"{ix.table}.{c}" for c in ix.columns}
        if cols & splits.held_out_columns:
            picked.append(ix)
    return IndexConfig(frozenset(picked[:2])) if picked else EMPTY_CONFIG


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    schema: Schema
    workload: list[Query]
    candidates: list[Index]
    samples: list[Sample]
    splits: DatasetSplits
    extractor: FeatureExtractor
    model: EstimatorModel
    hyper: EstimatorHyper
    diagnostics: TrainDiagnostics
    arrays: dict[str, SplitArrays]
    methods: dict[str, MethodEval]
    whatif_rel: dict[str, np.ndarray]
    errors: dict[str, dict[str, np.ndarray]]  # method -> split -> errors
    metrics: MetricsReport
    runs: list[TuningRun] = field(default_factory=list)
    outdir: Path | None = None


def _sanitize_port(kind: str) -> str:
    return kind.replace("+", "_")


def make_port(
    kind: str,
    model: EstimatorModel,
    extractor: FeatureExtractor,
    schema: Schema,
    cp: CostOracleParams,
    wp: WhatIfParams,
    mc_seed: int = 0,
) -> EstimatorPort:
    if kind == "oracle":
        return OraclePort(schema, cp)
    if kind == "whatif":
        return WhatIfPort(schema, wp, cp)
    if kind == "model":
        return ModelPort(model, extractor, schema, cp)
    if kind == "model+filter":
        return FilteredModelPort(model, extractor, schema, cp, wp, mc_seed=mc_seed)
    raise ValueError(f"unknown port kind {kind!r}")


def run_experiment(config: ExperimentConfig, outdir) -> ExperimentResult:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    schema = make_schema(config)
    workload = make_workload(config, schema)
    cp = cost_params(config)
    wp = whatif_params(config)
    candidates = candidate_indexes(workload, schema, config.candidates.max_width)
    configs = configs_from_candidates(
        candidates,
        seed=config.seed + 2,
        n_multi=config.configs.n_multi,
        max_indexes=config.configs.max_indexes,
        include_empty=config.configs.include_empty,
    )
    oracle = CostOracle(schema, cp)
    samples = build_dataset(schema, workload, configs, oracle)

    dump_json(schema_to_dict(schema), outdir / "schema.json")
    dump_json(workload_to_dict(workload), outdir / "workload.json")
    write_dataset_csv(samples, outdir / "dataset.csv")

    splits = split_ood(
        samples, seed=config.seed + 3, targets=config.split.targets,
        tolerance=config.split.tolerance,
    )
    dump_json(splits_to_dict(splits), outdir / "splits.json")

    extractor = FeatureExtractor(schema, max_touched_slots(workload))
    train_kept = exclude_negative_benefit(splits.d_train)
    arrays = {
        "train": split_arrays(extractor, train_kept),
        "test": split_arrays(extractor, splits.d_test),
        "eval": split_arrays(extractor, splits.d_eval),
    }

    model, hyper, diag = train_best(
        arrays["train"].x2,
        arrays["train"].x1.reshape(len(train_kept), -1),
        arrays["train"].targets,
        arrays["test"].x2,
        arrays["test"].targets,
        extractor.t,
        extractor.dim1,
        extractor.dim2,
        base_hyper(config),
        n_draws=config.model.hyper_draws,
        seed=config.seed + 4,
    )

    methods = evaluate_methods(
        model, arrays, hyper, k=config.ensemble.k,
        alpha=config.filter.alpha, seed=config.seed + 5,
    )
    hybrid_train = methods["hybrid"].uncertainties["train"]
    model.thresholds = uq.calibrate_filter(
        hybrid_train["u1"],
        hybrid_train["u2"] if config.filter.mode == "hybrid" else None,
        alpha=config.filter.alpha,
        mode=config.filter.mode,
    )
    save_model(model, outdir / "model.json")

    whatif_rel = {
        split: whatif_rel_estimates(split_samples, wp, cp, schema)
        for split, split_samples in (
            ("train", train_kept), ("test", splits.d_test), ("eval", splits.d_eval),
        )
    }

    errors = compute_errors(methods, arrays, whatif_rel)
    metrics = build_metrics(methods, arrays, errors)
    write_uncertainties_csv(methods, arrays, outdir / "uncertainties.csv")
    write_errors_csv(methods, arrays, errors, whatif_rel, outdir / "errors.csv")
    write_filter_reports(model, methods, arrays, whatif_rel, outdir / "reports.csv")

    labeled_runs = run_tuning(
        config, schema, workload, candidates, splits, model, extractor, cp, wp, metrics
    )
    for label, run in labeled_runs:
        name = f"tuning_{_sanitize_port(run.port_kind)}_{label}.json"
        dump_json(run.to_dict(schema), outdir / name)
    runs = [run for _, run in labeled_runs]

    metrics.timing.update(measure_timing(model, arrays["eval"]))
    metrics.validate()
    dump_json(metrics.to_dict(), outdir / "metrics.json")
    dump_json({"timing": metrics.timing}, outdir / "timing.json")

    return ExperimentResult(
        config=config,
        schema=schema,
        workload=workload,
        candidates=candidates,
        samples=samples,
        splits=splits,
        extractor=extractor,
        model=model,
        hyper=hyper,
        diagnostics=diag,
        arrays=arrays,
        methods=methods,
        whatif_rel=whatif_rel,
        errors=errors,
        metrics=metrics,
        runs=runs,
        outdir=outdir,
    )


def compute_errors(
    methods: dict[str, MethodEval],
    arrays: dict[str, SplitArrays],
    whatif_rel: dict[str, np.ndarray],
) -> dict[str, dict[str, np.ndarray]]:
    """Relative errors per method and split; UQ methods are composed with the
    what-if fallback on flagged samples."""
    errors: dict[str, dict[str, np.ndarray]] = {
        "model": {}, "whatif": {},
    }
    for split in SPLITS:
        truth = arrays[split].rel_true
        errors["model"][split] = be_errors(methods["ae"].predictions[split], truth)
        errors["whatif"][split] = be_errors(whatif_rel[split], truth)
    for name, method in methods.items():
        errors[name] = {
            split: be_errors(
                method.composed(split, whatif_rel[split]), arrays[split].rel_true
            )
            for split in SPLITS
        }
    return errors


def build_metrics(
    methods: dict[str, MethodEval],
    arrays: dict[str, SplitArrays],
    errors: dict[str, dict[str, np.ndarray]],
) -> MetricsReport:
    metrics = MetricsReport()
    for name, method in methods.items():
        own_train = be_errors(method.predictions["train"], arrays["train"].rel_true)
        metrics.unreliable_recall[name] = {
            split: unreliable_recall(
                method.flags[split],
                own_train,
                be_errors(method.predictions[split], arrays[split].rel_true),
            )
            for split in ("train", "eval")
        }
        metrics.fallback_fraction[name] = float(method.flags["eval"].mean())
        metrics.train_flag_rate[name] = float(method.flags["train"].mean())
    for name in ("model", "whatif", "hybrid", "ae", "mcd", "ensemble"):
        metrics.error_percentiles[name] = error_percentiles(errors[name]["eval"])
    return metrics


def run_tuning(
    config: ExperimentConfig,
    schema: Schema,
    workload: list[Query],
    candidates: list[Index],
    splits: DatasetSplits,
    model: EstimatorModel,
    extractor: FeatureExtractor,
    cp: CostOracleParams,
    wp: WhatIfParams,
    metrics: MetricsReport,
) -> list[tuple[str, TuningRun]]:
    held = splits.held_out_templates
    if config.tuning.workload == "ood":
        tuning_workload = [q for q in workload if q.template_id in held]
    elif config.tuning.workload == "train":
        tuning_workload = [q for q in workload if q.template_id not in held]
    else:
        tuning_workload = workload
    i0 = (
        ood_baseline_config(splits, candidates, schema)
        if config.tuning.baseline == "ood"
        else EMPTY_CONFIG
    )
    runs = []
    for b_idx, (label, budget) in enumerate(config.tuning.budgets(schema.total_bytes)):
        for port_kind in config.tuning.ports:
            port = make_port(
                port_kind, model, extractor, schema, cp, wp,
                mc_seed=config.seed + 900 + b_idx,
            )
            run = enumerate_greedy(
                tuning_workload, i0, candidates, budget, port, schema, cp,
                time_limit=config.tuning.time_limit,
            )
            runs.append((label, run))
            metrics.improvement.setdefault(port_kind, {})[label] = run.improvement
            if run.estimator_calls:
                metrics.whatif_call_fraction[port_kind] = run.whatif_calls / (
                    2.0 * run.estimator_calls
                )
    for port_kind, per_budget in metrics.improvement.items():
        values = np.array(list(per_budget.values()))
        metrics.improvement_summary[port_kind] = {
            "mean": float(values.mean()),
            "var": float(values.var()),
        }
    return runs


def measure_timing(model: EstimatorModel, arrays: SplitArrays, batch: int = 256) -> dict:
    x2 = arrays.x2[:batch]
    x1 = arrays.x1[: len(x2)]
    start = time.perf_counter()
    model.predict_plain(x2)
    plain_s = time.perf_counter() - start
    start = time.perf_counter()
    blocks, pooled = model.encode_batch(x2)
    uq.recon_error_batch(x1, model.reconstruct_batch(blocks))
    model.predict_mc_batch(pooled, rng=np.random.default_rng(0))
    hybrid_s = time.perf_counter() - start
    return {
        "batch_size": float(len(x2)),
        "plain_batch_s": plain_s,
        "hybrid_batch_s": hybrid_s,
    }


def write_uncertainties_csv(methods, arrays, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "split", "method", "uncertainty", "value"])
        for name, method in methods.items():
            for split in SPLITS:
                ids = arrays[split].sample_ids
                for u_name, values in method.uncertainties[split].items():
                    for sid, value in zip(ids, values):
                        writer.writerow([sid, split, name, u_name, repr(float(value))])


def write_errors_csv(methods, arrays, errors, whatif_rel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "method", "prediction", "rel_true", "error"])
        ids = arrays["eval"].sample_ids
        truth = arrays["eval"].rel_true
        columns = {
            "model": methods["ae"].predictions["eval"],
            "whatif": whatif_rel["eval"],
        }
        for name, method in methods.items():
            columns[name] = method.composed("eval", whatif_rel["eval"])
        for name, preds in columns.items():
            errs = errors[name]["eval"]
            for sid, pred, t, err in zip(ids, preds, truth, errs):
                writer.writerow([sid, name, repr(float(pred)), repr(float(t)), repr(float(err))])


def write_filter_reports(model, methods, arrays, whatif_rel, path) -> None:
    """Apply the calibrated filter sample-by-sample on the eval split and
    stream the reports."""
    hybrid = methods["hybrid"]
    ids = arrays["eval"].sample_ids
    rows = []
    for i, sid in enumerate(ids):
        u1 = float(hybrid.uncertainties["eval"]["u1"][i])
        u2 = float(hybrid.uncertainties["eval"]["u2"][i])
        if model.thresholds.mode == "u1_only":
            u2 = None
        report = uq.apply_filter(
            float(hybrid.predictions["eval"][i]),
            u1,
            u2,
            model.thresholds,
            lambda i=i: float(whatif_rel["eval"][i]),
        )
        rows.append((sid, report))
    uq.write_reports_csv(rows, path)
