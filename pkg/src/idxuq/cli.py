"""Command-line pipeline: gen, train, calibrate, eval-uq, eval-be, tune, report.

Stages communicate only through files in a run directory, so the expensive
training step can be reused across tuning experiments. Every stage is
idempotent: rerunning with the same config and seeds rewrites identical bytes.

The default output root is ``$IDXUQ_OUT`` (falling back to ``./runs``).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from . import uq
from .estimator import load_model, save_model, train_best
from .evalkit.baselines import evaluate_methods, model_uncertainties
from .evalkit.dataset import (
    exclude_negative_benefit,
    load_dataset_csv,
    split_ood,
    splits_from_dict,
    splits_to_dict,
    write_dataset_csv,
)
from .evalkit.experiment import (
    ConfigError,
    ExperimentConfig,
    base_hyper,
    build_metrics,
    compute_errors,
    cost_params,
    load_config,
    make_schema,
    make_workload,
    run_tuning,
    split_arrays,
    whatif_params,
    whatif_rel_estimates,
    write_errors_csv,
    write_filter_reports,
    write_uncertainties_csv,
)
from .evalkit.metrics import MetricsReport
from .featurize import FeatureExtractor
from .synthdb import (
    dump_json,
    load_json,
    max_touched_slots,
    schema_from_dict,
    schema_to_dict,
    workload_from_dict,
    workload_to_dict,
    CostOracle,
)
from .evalkit.dataset import build_dataset, configs_from_candidates
from .advisor import candidate_indexes


def _default_out() -> Path:
    return Path(os.environ.get("IDXUQ_OUT", "runs")) / "default"


def _load_cfg(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = _override(cfg, seed=args.seed)
    return cfg


def _override(cfg: ExperimentConfig, **top_level) -> ExperimentConfig:
    data = dataclasses.asdict(cfg)
    data.update(top_level)
    return ExperimentConfig.from_dict(data)


class _RunDir:
    """Loads pipeline state lazily from a run directory."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out

    def require(self, *names: str) -> None:
        missing = [n for n in names if not (self.out / n).exists()]
        if missing:
            raise FileNotFoundError(
                f"missing {', '.join(missing)} under {self.out}; run earlier stages first"
            )

    def load_schema(self):
        return schema_from_dict(load_json(self.out / "schema.json"))

    def load_workload(self):
        return workload_from_dict(load_json(self.out / "workload.json"))

    def load_samples(self, workload):
        return load_dataset_csv(self.out / "dataset.csv", workload)

    def load_splits(self, samples):
        return splits_from_dict(load_json(self.out / "splits.json"), samples)

    def load_state(self):
        self.require("schema.json", "workload.json", "dataset.csv", "splits.json")
        schema = self.load_schema()
        workload = self.load_workload()
        samples = self.load_samples(workload)
        splits = self.load_splits(samples)
        extractor = FeatureExtractor(schema, max_touched_slots(workload))
        train_kept = exclude_negative_benefit(splits.d_train)
        arrays = {
            "train": split_arrays(extractor, train_kept),
            "test": split_arrays(extractor, splits.d_test),
            "eval": split_arrays(extractor, splits.d_eval),
        }
        return schema, workload, samples, splits, extractor, train_kept, arrays


def cmd_gen(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema = make_schema(cfg)
    workload = make_workload(cfg, schema)
    candidates = candidate_indexes(workload, schema, cfg.candidates.max_width)
    configs = configs_from_candidates(
        candidates,
        seed=cfg.seed + 2,
        n_multi=cfg.configs.n_multi,
        max_indexes=cfg.configs.max_indexes,
        include_empty=cfg.configs.include_empty,
    )
    oracle = CostOracle(schema, cost_params(cfg))
    samples = build_dataset(schema, workload, configs, oracle)
    dump_json(schema_to_dict(schema), out / "schema.json")
    dump_json(workload_to_dict(workload), out / "workload.json")
    write_dataset_csv(samples, out / "dataset.csv")
    splits = split_ood(
        samples, seed=cfg.seed + 3, targets=cfg.split.targets,
        tolerance=cfg.split.tolerance,
    )
    dump_json(splits_to_dict(splits), out / "splits.json")
    print(f"gen: {len(samples)} samples -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    run = _RunDir(cfg, Path(args.out))
    schema, workload, samples, splits, extractor, train_kept, arrays = run.load_state()
    model, hyper, diag = train_best(
        arrays["train"].x2,
        arrays["train"].x1.reshape(len(train_kept), -1),
        arrays["train"].targets,
        arrays["test"].x2,
        arrays["test"].targets,
        extractor.t,
        extractor.dim1,
        extractor.dim2,
        base_hyper(cfg),
        n_draws=cfg.model.hyper_draws,
        seed=cfg.seed + 4,
    )
    mode = "u1_only" if args.u1_only else cfg.filter.mode
    alpha = args.alpha if args.alpha is not None else cfg.filter.alpha
    u1, _, mc_var = model_uncertainties(model, arrays, seed=cfg.seed + 5)
    model.thresholds = uq.calibrate_filter(
        u1["train"], mc_var["train"] if mode == "hybrid" else None,
        alpha=alpha, mode=mode,
    )
    save_model(model, run.out / "model.json")
    print(
        f"train: phase1 final loss {diag.phase1_losses[-1]:.5f}, "
        f"phase2 final loss {diag.phase2_losses[-1]:.5f}, mode {mode} -> model.json"
    )
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    run = _RunDir(cfg, Path(args.out))
    run.require("model.json")
    _, _, _, _, _, _, arrays = run.load_state()
    model = load_model(run.out / "model.json")
    mode = "u1_only" if args.u1_only else cfg.filter.mode
    alpha = args.alpha if args.alpha is not None else cfg.filter.alpha
    u1, _, mc_var = model_uncertainties(model, arrays, seed=cfg.seed + 5)
    model.thresholds = uq.calibrate_filter(
        u1["train"], mc_var["train"] if mode == "hybrid" else None,
        alpha=alpha, mode=mode,
    )
    save_model(model, run.out / "model.json")
    print(f"calibrate: mode {mode}, alpha {alpha} -> model.json")
    return 0


def _evaluated_state(args):
    cfg = _load_cfg(args)
    run = _RunDir(cfg, Path(args.out))
    run.require("model.json")
    schema, workload, samples, splits, extractor, train_kept, arrays = run.load_state()
    model = load_model(run.out / "model.json")
    methods = evaluate_methods(
        model, arrays, base_hyper(cfg), k=cfg.ensemble.k,
        alpha=cfg.filter.alpha, seed=cfg.seed + 5,
    )
    whatif_rel = {
        split: whatif_rel_estimates(split_samples, whatif_params(cfg), cost_params(cfg), schema)
        for split, split_samples in (
            ("train", train_kept), ("test", splits.d_test), ("eval", splits.d_eval),
        )
    }
    return cfg, run, schema, workload, splits, extractor, arrays, model, methods, whatif_rel


def cmd_eval_uq(args) -> int:
    cfg, run, *_, arrays, model, methods, whatif_rel = _evaluated_state(args)
    errors = compute_errors(methods, arrays, whatif_rel)
    metrics = build_metrics(methods, arrays, errors)
    write_uncertainties_csv(methods, arrays, run.out / "uncertainties.csv")
    write_filter_reports(model, methods, arrays, whatif_rel, run.out / "reports.csv")
    dump_json(
        {
            "unreliable_recall": metrics.unreliable_recall,
            "fallback_fraction": metrics.fallback_fraction,
        },
        run.out / "eval_uq.json",
    )
    for name, recalls in sorted(metrics.unreliable_recall.items()):
        print(f"eval-uq: {name}: train={recalls['train']} eval={recalls['eval']}")
    return 0


def cmd_eval_be(args) -> int:
    cfg, run, *_, arrays, model, methods, whatif_rel = _evaluated_state(args)
    errors = compute_errors(methods, arrays, whatif_rel)
    metrics = build_metrics(methods, arrays, errors)
    write_errors_csv(methods, arrays, errors, whatif_rel, run.out / "errors.csv")
    dump_json({"error_percentiles": metrics.error_percentiles}, run.out / "eval_be.json")
    for name, pct in sorted(metrics.error_percentiles.items()):
        print(
            f"eval-be: {name}: p50={pct['p50']:.4f} p95={pct['p95']:.4f} p99={pct['p99']:.4f}"
        )
    return 0


def cmd_tune(args) -> int:
    cfg = _load_cfg(args)
    if args.budgets and args.budget_bytes:
        raise ConfigError("--budgets and --budget-bytes are mutually exclusive")
    if args.budgets or args.budget_bytes:
        tuning = dataclasses.asdict(cfg.tuning)
        try:
            if args.budgets:
                tuning["budgets_pct"] = [float(b) for b in args.budgets.split(",")]
                tuning["budgets_bytes"] = []
            else:
                tuning["budgets_bytes"] = [int(b) for b in args.budget_bytes.split(",")]
        except ValueError as exc:
            raise ConfigError(f"budget list: {exc}") from exc
        cfg = _override(cfg, tuning=tuning)
    run = _RunDir(cfg, Path(args.out))
    run.require("model.json")
    schema, workload, samples, splits, extractor, train_kept, arrays = run.load_state()
    model = load_model(run.out / "model.json")
    candidates = candidate_indexes(workload, schema, cfg.candidates.max_width)
    metrics = MetricsReport()
    labeled_runs = run_tuning(
        cfg, schema, workload, candidates, splits, model, extractor,
        cost_params(cfg), whatif_params(cfg), metrics,
    )
    for label, tr in labeled_runs:
        name = f"tuning_{tr.port_kind.replace('+', '_')}_{label}.json"
        dump_json(tr.to_dict(schema), run.out / name)
        print(
            f"tune: {tr.port_kind} @ {label}: improvement {tr.improvement:.4f}, "
            f"{len(tr.steps)} indexes"
        )
    dump_json(
        {
            "improvement": metrics.improvement,
            "improvement_summary": metrics.improvement_summary,
            "whatif_call_fraction": metrics.whatif_call_fraction,
        },
        run.out / "eval_tuning.json",
    )
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    merged: dict = {}
    for name in ("eval_uq.json", "eval_be.json", "eval_tuning.json"):
        path = out / name
        if path.exists():
            merged.update(load_json(path))
    if not merged:
        raise FileNotFoundError(f"no eval outputs under {out}; run eval-uq/eval-be/tune first")
    dump_json(merged, out / "metrics.json")
    print(f"report: wrote {out / 'metrics.json'}")
    for section in sorted(merged):
        print(f"  {section}: {json_summary(merged[section])}")
    return 0


def json_summary(value, limit: int = 70) -> str:
    import json as _json

    text = _json.dumps(value, sort_keys=True)
    return text if len(text) <= limit else text[: limit - 3] + "..."


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idxuq",
        description="Uncertainty-aware index benefit estimation workbench.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (.json or .toml)")
        p.add_argument("--out", default=str(_default_out()), help="run directory")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")

    p = sub.add_parser("gen", help="generate schema, workload, dataset, and splits")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="two-phase training plus threshold calibration")
    common(p)
    p.add_argument("--alpha", type=float, default=None, help="IQR multiplier (default 1.3)")
    p.add_argument("--u1-only", action="store_true", help="calibrate the cheap single-signal mode")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="recalibrate thresholds of an existing model")
    common(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--u1-only", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval-uq", help="unreliable-sample recall and uncertainty CSVs")
    common(p)
    p.set_defaults(func=cmd_eval_uq)

    p = sub.add_parser("eval-be", help="benefit estimation error percentiles")
    common(p)
    p.set_defaults(func=cmd_eval_be)

    p = sub.add_parser("tune", help="budget-constrained tuning per estimator port")
    common(p)
    p.add_argument(
        "--budgets", default=None,
        help="comma-separated budgets as percentages of total table bytes, e.g. 5,10,20",
    )
    p.add_argument(
        "--budget-bytes", default=None,
        help="comma-separated absolute byte budgets, e.g. 500000,2000000",
    )
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report", help="merge stage outputs into metrics.json")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
