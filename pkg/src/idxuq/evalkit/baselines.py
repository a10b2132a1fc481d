"""Uncertainty quantifiers evaluated side by side.

Each method yields per-sample predictions, uncertainty values, and reliability
flags on every split, calibrated with the same IQR rule on the training set:

* ``hybrid``   -- reconstruction error and MC-dropout variance, flag on either.
* ``ae``       -- reconstruction error only (the cheap mode; plain forward).
* ``mcd``      -- MC-dropout variance only.
* ``ensemble`` -- variance across independently seeded retrainings.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .. import uq
from ..estimator import EstimatorHyper, EstimatorModel, _train_phase1, build_model

METHODS = ("hybrid", "ae", "mcd", "ensemble")
SPLITS = ("train", "test", "eval")


@dataclass
class SplitArrays:
    """Featurized split: model inputs plus the ground truth for scoring."""

    x2: np.ndarray  # (n, t*dim2)
    x1: np.ndarray  # (n, t, dim1)
    targets: np.ndarray  # observed relative benefit (training signal)
    rel_true: np.ndarray  # noiseless relative benefit (ground truth)
    sample_ids: list[str]


@dataclass
class MethodEval:
    name: str
    thresholds: dict[str, float]
    predictions: dict[str, np.ndarray]  # relative-benefit predictions per split
    uncertainties: dict[str, dict[str, np.ndarray]]  # split -> {u1: .., u2: ..}
    flags: dict[str, np.ndarray]

    def composed(self, split: str, whatif_rel: np.ndarray) -> np.ndarray:
        """Predictions after replacing flagged estimates with what-if values."""
        return np.where(self.flags[split], whatif_rel, self.predictions[split])


def model_uncertainties(
    model: EstimatorModel, arrays: dict[str, SplitArrays], seed: int
) -> tuple[dict, dict, dict]:
    """u1, MC means, and MC variances per split, one seeded stream per split."""
    u1, mc_mean, mc_var = {}, {}, {}
    for i, split in enumerate(SPLITS):
        arr = arrays[split]
        blocks, pooled = model.encode_batch(arr.x2)
        recon = model.reconstruct_batch(blocks)
        u1[split] = uq.recon_error_batch(arr.x1, recon)
        rng = np.random.default_rng(seed + i)
        means, variances, _ = model.predict_mc_batch(pooled, rng=rng)
        mc_mean[split], mc_var[split] = means, variances
    return u1, mc_mean, mc_var


def train_ensemble(
    base_model_hyper: EstimatorHyper,
    t: int,
    dim1: int,
    dim2: int,
    x2_train: np.ndarray,
    y_train: np.ndarray,
    k: int,
    seed: int,
) -> list[EstimatorModel]:
    """Phase-1-only members differing in their training seed."""
    members = []
    for j in range(k):
        hyper = replace(base_model_hyper, seed=seed + 1000 * j)
        model = build_model(t, dim1, dim2, hyper)
        _train_phase1(model, x2_train, np.asarray(y_train, dtype=float), hyper)
        model.trained_phase1 = True
        members.append(model)
    return members


def evaluate_methods(
    model: EstimatorModel,
    arrays: dict[str, SplitArrays],
    hyper: EstimatorHyper,
    k: int = 5,
    alpha: float = uq.DEFAULT_ALPHA,
    seed: int = 0,
) -> dict[str, MethodEval]:
    """Calibrate and evaluate all quantifiers on the same trained model."""
    if k < 2:
        raise ValueError("ensemble needs k >= 2 members")
    u1, mc_mean, mc_var = model_uncertainties(model, arrays, seed)
    plain = {s: model.predict_plain(arrays[s].x2) for s in SPLITS}

    theta1, _ = uq.iqr_threshold(u1["train"], alpha)
    theta2, _ = uq.iqr_threshold(mc_var["train"], alpha)

    out = {
        "hybrid": MethodEval(
            name="hybrid",
            thresholds={"u1": theta1, "u2": theta2},
            predictions=mc_mean,
            uncertainties={s: {"u1": u1[s], "u2": mc_var[s]} for s in SPLITS},
            flags={s: (u1[s] > theta1) | (mc_var[s] > theta2) for s in SPLITS},
        ),
        "ae": MethodEval(
            name="ae",
            thresholds={"u1": theta1},
            predictions=plain,
            uncertainties={s: {"u1": u1[s]} for s in SPLITS},
            flags={s: u1[s] > theta1 for s in SPLITS},
        ),
        "mcd": MethodEval(
            name="mcd",
            thresholds={"u2": theta2},
            predictions=mc_mean,
            uncertainties={s: {"u2": mc_var[s]} for s in SPLITS},
            flags={s: mc_var[s] > theta2 for s in SPLITS},
        ),
    }

    members = train_ensemble(
        hyper, model.t, model.dim1, model.dim2,
        arrays["train"].x2, arrays["train"].targets, k, seed + 500,
    )
    member_preds = {
        s: np.stack([m.predict_plain(arrays[s].x2) for m in members]) for s in SPLITS
    }
    ens_var = {s: member_preds[s].var(axis=0) for s in SPLITS}
    theta_e, _ = uq.iqr_threshold(ens_var["train"], alpha)
    out["ensemble"] = MethodEval(
        name="ensemble",
        thresholds={"u_ens": theta_e},
        predictions={s: member_preds[s].mean(axis=0) for s in SPLITS},
        uncertainties={s: {"u_ens": ens_var[s]} for s in SPLITS},
        flags={s: ens_var[s] > theta_e for s in SPLITS},
    )
    return out
