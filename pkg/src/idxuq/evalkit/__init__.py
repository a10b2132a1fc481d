from .baselines import MethodEval, SplitArrays, evaluate_methods, train_ensemble
from .dataset import (
    DatasetSplits,
    Sample,
    build_dataset,
    configs_from_candidates,
    exclude_negative_benefit,
    load_dataset_csv,
    split_ood,
    splits_from_dict,
    splits_to_dict,
    write_dataset_csv,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    load_config,
    make_port,
    run_experiment,
)
from .metrics import (
    MetricsReport,
    be_errors,
    error_percentiles,
    unreliable_recall,
    unreliable_threshold,
)

__all__ = [
    "ConfigError",
    "DatasetSplits",
    "ExperimentConfig",
    "ExperimentResult",
    "MethodEval",
    "MetricsReport",
    "Sample",
    "SplitArrays",
    "be_errors",
    "build_dataset",
    "configs_from_candidates",
    "error_percentiles",
    "evaluate_methods",
    "exclude_negative_benefit",
    "load_config",
    "load_dataset_csv",
    "make_port",
    "run_experiment",
    "split_ood",
    "splits_from_dict",
    "splits_to_dict",
    "train_ensemble",
    "unreliable_recall",
    "unreliable_threshold",
    "write_dataset_csv",
]
