"""Uncertainty quantification and the result filter.

Two per-prediction uncertainty signals are computed:

* ``u1`` -- mean per-slot reconstruction MSE between the raw feature vectors
  and the decoder's reconstruction; rises on inputs the encoder never learned
  to compress.
* ``u2`` -- population variance of repeated dropout-active predictions.

Thresholds are calibrated on training-set uncertainties with an IQR outlier
rule, ``theta = min(P75 + alpha * (P75 - P25), max)``, which keeps the
threshold below the extreme tail of the (typically long-tailed) training
distribution. The filter returns the model's estimate only when the
uncertainties sit at or below their thresholds, and falls back to the what-if
estimate otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

DEFAULT_ALPHA = 1.3
DEFAULT_WINDOW = 500
DEFAULT_FRACTION = 0.3

MODES = ("hybrid", "u1_only")
SIGNALS = ("none", "retrain_data", "redesign_features")


def recon_error(v1: np.ndarray, v1_hat: np.ndarray, weights=None) -> float:
    """Mean over slots of the (optionally weighted) per-slot MSE."""
    return float(recon_error_batch(v1[None], v1_hat[None], weights)[0])


def recon_error_batch(v1: np.ndarray, v1_hat: np.ndarray, weights=None) -> np.ndarray:
    v1 = np.asarray(v1, dtype=float)
    v1_hat = np.asarray(v1_hat, dtype=float)
    if v1.shape != v1_hat.shape or v1.ndim != 3:
        raise ValueError(f"shape mismatch: {v1.shape} vs {v1_hat.shape}")
    dim = v1.shape[2]
    if weights is None:
        w = np.ones(dim)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (dim,):
            raise ValueError(f"weights must have shape ({dim},)")
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
    per_slot = ((v1 - v1_hat) ** 2 * w).mean(axis=2)  # (n, t)
    return per_slot.mean(axis=1)


def mc_variance(samples) -> float:
    """Population variance (divide by m) of repeated predictions."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("need at least one prediction sample")
    return float(np.var(samples))


def iqr_threshold(values, alpha: float = DEFAULT_ALPHA) -> tuple[float, dict]:
    """IQR-rule threshold over calibration values, capped at their maximum.

    Percentiles use linear interpolation on sorted ranks ``(n - 1) * q``.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 4:
        raise ValueError("calibration needs at least 4 values")
    if not 1.0 <= alpha <= 1.5:
        raise ValueError("alpha must be in [1, 1.5]")
    p25, p75 = np.percentile(values, [25.0, 75.0])
    vmax = float(values.max())
    theta = min(float(p75 + alpha * (p75 - p25)), vmax)
    return theta, {"p25": float(p25), "p75": float(p75), "max": vmax}


@dataclass(frozen=True)
class FilterConfig:
    mode: str
    alpha: float
    theta1: float
    stats1: dict
    theta2: float | None = None
    stats2: dict | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if self.mode == "hybrid" and self.theta2 is None:
            raise ValueError("hybrid mode requires a calibrated theta2")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "alpha": self.alpha,
            "theta1": self.theta1,
            "stats1": self.stats1,
            "theta2": self.theta2,
            "stats2": self.stats2,
        }

    @staticmethod
    def from_dict(data: dict) -> "FilterConfig":
        return FilterConfig(
            mode=data["mode"],
            alpha=data["alpha"],
            theta1=data["theta1"],
            stats1=data["stats1"],
            theta2=data.get("theta2"),
            stats2=data.get("stats2"),
        )


def calibrate_filter(
    u1_values,
    u2_values=None,
    alpha: float = DEFAULT_ALPHA,
    mode: str = "hybrid",
) -> FilterConfig:
    """Calibrate thresholds from training-set uncertainties."""
    theta1, stats1 = iqr_threshold(u1_values, alpha)
    theta2 = stats2 = None
    if mode == "hybrid":
        if u2_values is None:
            raise ValueError("hybrid calibration requires u2 values")
        theta2, stats2 = iqr_threshold(u2_values, alpha)
    return FilterConfig(mode, alpha, theta1, stats1, theta2, stats2)


@dataclass(frozen=True)
class UncertaintyReport:
    prediction: float
    u1: float
    u2: float | None
    flag_u1: bool
    flag_u2: bool
    source: str  # "model" | "whatif"


def apply_filter(
    prediction: float,
    u1: float,
    u2: float | None,
    config: FilterConfig,
    whatif_fallback: Callable[[], float],
) -> UncertaintyReport:
    """Return the model estimate when reliable, else invoke the fallback.

    The fallback is called only when a flag fires, so what-if cost is paid
    only for filtered samples.
    """
    if config is None:
        raise ValueError("filter requires a calibrated FilterConfig")
    flag_u1 = u1 > config.theta1
    if config.mode == "u1_only":
        u2 = None
        flag_u2 = False
    else:
        if u2 is None:
            raise ValueError("hybrid filtering requires u2")
        flag_u2 = u2 > config.theta2
    if flag_u1 or flag_u2:
        return UncertaintyReport(float(whatif_fallback()), u1, u2, flag_u1, flag_u2, "whatif")
    return UncertaintyReport(float(prediction), u1, u2, flag_u1, flag_u2, "model")


def update_signal(
    reports: Iterable[UncertaintyReport],
    fraction_threshold: float = DEFAULT_FRACTION,
) -> str:
    """Drift signal from a window of filter outcomes.

    With too many fallbacks, the dominant flag points at the remedy: u1-driven
    fallbacks call for collecting more data, u2-driven ones for redesigning
    the features/model. Ties resolve to the data signal.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("update_signal needs a nonempty window")
    fallbacks = [r for r in reports if r.source == "whatif"]
    if len(fallbacks) / len(reports) <= fraction_threshold:
        return "none"
    u1_driven = sum(r.flag_u1 for r in fallbacks)
    u2_driven = sum(r.flag_u2 for r in fallbacks)
    return "retrain_data" if u1_driven >= u2_driven else "redesign_features"


def write_reports_csv(rows: Iterable[tuple[str, UncertaintyReport]], path) -> None:
    """Stream per-sample reports: sample_id,yhat,u1,u2,flag_u1,flag_u2,source."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "yhat", "u1", "u2", "flag_u1", "flag_u2", "source"])
        for sample_id, r in rows:
            writer.writerow(
                [
                    sample_id,
                    repr(r.prediction),
                    repr(r.u1),
                    "" if r.u2 is None else repr(r.u2),
                    int(r.flag_u1),
                    int(r.flag_u2),
                    r.source,
                ]
            )
