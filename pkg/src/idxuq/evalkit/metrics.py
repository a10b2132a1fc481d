"""Evaluation metrics: relative estimation errors, their percentiles, and the
unreliable-sample recall used to score uncertainty quantifiers.

All errors are relative to the noiseless current-config cost, so the same
yardstick applies to learned, what-if, and composed estimators:
``|estimate - true_benefit| / cost_i0  ==  |rel_estimate - rel_true|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNRELIABLE_PERCENTILE = 90.0


def be_errors(rel_predictions: np.ndarray, rel_true: np.ndarray) -> np.ndarray:
    rel_predictions = np.asarray(rel_predictions, dtype=float)
    rel_true = np.asarray(rel_true, dtype=float)
    if rel_predictions.shape != rel_true.shape:
        raise ValueError("prediction/truth shape mismatch")
    return np.abs(rel_predictions - rel_true)


def error_percentiles(errors: np.ndarray) -> dict[str, float]:
    p50, p95, p99 = np.percentile(errors, [50.0, 95.0, 99.0])
    return {"p50": float(p50), "p95": float(p95), "p99": float(p99)}


def unreliable_threshold(train_errors: np.ndarray) -> float:
    return float(np.percentile(train_errors, UNRELIABLE_PERCENTILE))


def unreliable_recall(
    flags: np.ndarray, train_errors: np.ndarray, split_errors: np.ndarray
) -> float | None:
    """Fraction of unreliable samples (error above the train P90) that were
    flagged. ``None`` when the split has no unreliable samples."""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != np.shape(split_errors):
        raise ValueError("flags/errors shape mismatch")
    unreliable = np.asarray(split_errors) > unreliable_threshold(train_errors)
    if not unreliable.any():
        return None
    return float((flags & unreliable).sum() / unreliable.sum())


@dataclass
class MetricsReport:
    """Aggregated experiment outcome.

    ``timing`` is kept apart from the deterministic payload: wall-clock times
    can never be byte-identical across reruns.
    """

    unreliable_recall: dict[str, dict[str, float | None]] = field(default_factory=dict)
    error_percentiles: dict[str, dict[str, float]] = field(default_factory=dict)
    fallback_fraction: dict[str, float] = field(default_factory=dict)
    train_flag_rate: dict[str, float] = field(default_factory=dict)
    improvement: dict[str, dict[str, float]] = field(default_factory=dict)
    improvement_summary: dict[str, dict[str, float]] = field(default_factory=dict)
    whatif_call_fraction: dict[str, float] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        data = {
            "unreliable_recall": self.unreliable_recall,
            "error_percentiles": self.error_percentiles,
            "fallback_fraction": self.fallback_fraction,
            "train_flag_rate": self.train_flag_rate,
            "improvement": self.improvement,
            "improvement_summary": self.improvement_summary,
            "whatif_call_fraction": self.whatif_call_fraction,
        }
        if include_timing:
            data["timing"] = self.timing
        return data

    def validate(self) -> None:
        for method, pct in self.error_percentiles.items():
            if not pct["p50"] <= pct["p95"] <= pct["p99"]:
                raise ValueError(f"percentiles not monotone for {method}")
        for method, recalls in self.unreliable_recall.items():
            for split, value in recalls.items():
                if value is not None and not 0.0 <= value <= 1.0:
                    raise ValueError(f"recall out of range for {method}/{split}")
