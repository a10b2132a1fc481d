"""The benefit estimator: encoder, mirrored decoder, and MC-dropout predictor.

The encoder is applied per slot with shared weights (dim2 -> h), producing t
latent blocks; mean-pooling over blocks yields the hidden vector fed to the
predictor. Sharing weights across slots makes the latent representation
respect the slot structure: identical slots encode identically and padding
slots stay zero under zero biases. The decoder, by contrast, consumes the
*unpooled* concatenation of all t blocks and reconstructs the full raw
feature set jointly, because pooling destroys the per-slot information the
reconstruction needs.

Training runs in two phases: phase 1 fits encoder + predictor on the
relative-benefit regression; phase 2 freezes them and fits only the decoder
on reconstruction MSE, so adding uncertainty reporting can never degrade the
benefit estimates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .featurize import FeatureSet
from .neural import DenseNet, dense_net, net_from_dict, net_to_dict, train
from .uq import FilterConfig

MODEL_FORMAT_VERSION = "estimator-v1"
DEFAULT_MC_PASSES = 20


@dataclass(frozen=True)
class EstimatorHyper:
    h: int = 16
    encoder_hidden: tuple[int, ...] = (64,)
    predictor_hidden: tuple[int, ...] = (32,)
    decoder_hidden: tuple[int, ...] = (64,)
    dropout_p: float = 0.1
    mc_passes: int = DEFAULT_MC_PASSES
    phase1_epochs: int = 150
    phase2_epochs: int = 200
    batch_size: int = 32
    lr1: float = 0.01
    lr2: float = 0.01
    momentum: float = 0.9
    seed: int = 0


@dataclass
class EstimatorModel:
    encoder: DenseNet
    decoder: DenseNet
    predictor: DenseNet
    t: int
    dim1: int
    dim2: int
    h: int
    mc_passes: int = DEFAULT_MC_PASSES
    thresholds: FilterConfig | None = None
    trained_phase1: bool = False
    trained_phase2: bool = False

    def __post_init__(self) -> None:
        if self.encoder.in_dim != self.dim2:
            raise ValueError("encoder input must be dim2 (applied per slot)")
        if self.encoder.out_dim != self.h:
            raise ValueError("encoder output must be h units per slot")
        if self.decoder.in_dim != self.t * self.h or self.decoder.out_dim != self.t * self.dim1:
            raise ValueError("decoder must map t*h blocks to t*dim1 raw features")
        if self.predictor.in_dim != self.h or self.predictor.out_dim != 1:
            raise ValueError("predictor must map the pooled hidden vector to a scalar")

    # -- inference ---------------------------------------------------------

    def encode(self, fs: FeatureSet) -> tuple[np.ndarray, np.ndarray]:
        """Hidden blocks (t, h) and their mean-pooled vector (h,)."""
        blocks, pooled = self.encode_batch(fs.v2.reshape(1, -1))
        return blocks[0], pooled[0]

    def encode_batch(self, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = len(x2)
        slots = np.asarray(x2, dtype=float).reshape(n * self.t, self.dim2)
        out = self.encoder.forward(slots, mode="infer_plain")
        blocks = out.reshape(n, self.t, self.h)
        return blocks, blocks.mean(axis=1)

    def reconstruct(self, blocks: np.ndarray) -> np.ndarray:
        """Decode hidden blocks (t, h) back to raw features (t, dim1)."""
        return self.reconstruct_batch(blocks[None])[0]

    def reconstruct_batch(self, blocks: np.ndarray) -> np.ndarray:
        flat = blocks.reshape(len(blocks), self.t * self.h)
        out = self.decoder.forward(flat, mode="infer_plain")
        return out.reshape(len(out), self.t, self.dim1)

    def predict_plain(self, x2: np.ndarray) -> np.ndarray:
        """Dropout-off point prediction for a batch of flattened inputs."""
        _, pooled = self.encode_batch(x2)
        return self.predictor.forward(pooled, mode="infer_plain")[:, 0]

    def predict_mc(self, pooled: np.ndarray, m: int | None = None, rng=None) -> "PredictionSet":
        """m dropout-active predictor passes for one hidden vector."""
        means, variances, samples = self.predict_mc_batch(pooled[None], m, rng)
        return PredictionSet(samples[:, 0])

    def predict_mc_batch(self, pooled: np.ndarray, m: int | None = None, rng=None):
        m = self.mc_passes if m is None else m
        if m < 1:
            raise ValueError("mc pass count must be >= 1")
        if rng is None:
            rng = np.random.default_rng(0)
        n = len(pooled)
        samples = np.empty((m, n))
        for k in range(m):
            samples[k] = self.predictor.forward(pooled, mode="infer_mc", rng=rng)[:, 0]
        return samples.mean(axis=0), samples.var(axis=0), samples


@dataclass(frozen=True)
class PredictionSet:
    samples: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.samples.mean())

    @property
    def variance(self) -> float:
        """Population variance (divide by m)."""
        return float(self.samples.var())


def build_model(t: int, dim1: int, dim2: int, hyper: EstimatorHyper) -> EstimatorModel:
    encoder = dense_net([dim2, *hyper.encoder_hidden, hyper.h], seed=hyper.seed)
    predictor = dense_net(
        [hyper.h, *hyper.predictor_hidden, 1],
        dropout_p=hyper.dropout_p,
        seed=hyper.seed + 1,
    )
    decoder = dense_net(
        [t * hyper.h, *hyper.decoder_hidden, t * dim1], seed=hyper.seed + 2
    )
    return EstimatorModel(
        encoder, decoder, predictor, t, dim1, dim2, hyper.h, mc_passes=hyper.mc_passes
    )


def target_of(sample) -> float:
    """Relative benefit: observed benefit over the current-config cost."""
    if sample.cost_i0 <= 0:
        raise ValueError(f"sample {sample.query.id}: base cost must be positive")
    return sample.benefit / sample.cost_i0


# ---------------------------------------------------------------------------
# Two-phase training


@dataclass
class TrainDiagnostics:
    phase1_losses: list[float] = field(default_factory=list)
    phase2_losses: list[float] = field(default_factory=list)
    encoder_digest_before_phase2: str = ""
    encoder_digest_after_phase2: str = ""
    predictor_digest_before_phase2: str = ""
    predictor_digest_after_phase2: str = ""


def train_two_phase(
    model: EstimatorModel,
    x2: np.ndarray,
    x1: np.ndarray,
    y: np.ndarray,
    hyper: EstimatorHyper,
) -> TrainDiagnostics:
    """Phase 1: encoder + predictor on the benefit target. Phase 2: decoder
    only, on reconstruction of the raw features; encoder and predictor are
    untouched (verified by digest in the diagnostics)."""
    if len(x2) == 0:
        raise ValueError("training set is empty")
    diag = TrainDiagnostics()
    diag.phase1_losses = _train_phase1(model, x2, np.asarray(y, dtype=float), hyper)
    model.trained_phase1 = True

    diag.encoder_digest_before_phase2 = model.encoder.params_digest()
    diag.predictor_digest_before_phase2 = model.predictor.params_digest()
    blocks, _ = model.encode_batch(x2)
    result = train(
        model.decoder,
        blocks.reshape(len(x2), model.t * model.h),
        np.asarray(x1, dtype=float),
        epochs=hyper.phase2_epochs,
        batch_size=hyper.batch_size,
        learning_rate=hyper.lr2,
        seed=hyper.seed + 11,
        momentum=hyper.momentum,
    )
    diag.phase2_losses = result.losses
    diag.encoder_digest_after_phase2 = model.encoder.params_digest()
    diag.predictor_digest_after_phase2 = model.predictor.params_digest()
    model.trained_phase2 = True
    return diag


def _train_phase1(model: EstimatorModel, x2, y, hyper: EstimatorHyper) -> list[float]:
    rng = np.random.default_rng(hyper.seed + 7)
    y = y.reshape(-1, 1)
    enc, pred = model.encoder, model.predictor
    vel_enc = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in enc.layers]
    vel_pred = [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in pred.layers]
    losses = []
    n = len(x2)
    for _ in range(hyper.phase1_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            xb, yb = x2[batch], y[batch]
            nb = len(xb)
            slots = xb.reshape(nb * model.t, model.dim2)
            enc_out, enc_caches = enc.forward_cached(slots, mode="train", rng=rng)
            pooled = enc_out.reshape(nb, model.t, model.h).mean(axis=1)
            out, pred_caches = pred.forward_cached(pooled, mode="train", rng=rng)
            diff = out - yb
            loss = float(np.mean(diff**2))
            pred_grads, d_pooled = pred.backprop(pred_caches, 2.0 * diff / diff.size)
            # Mean-pool: each of the t slot blocks receives 1/t of the pooled grad.
            d_blocks = np.broadcast_to(
                d_pooled[:, None, :] / model.t, (nb, model.t, model.h)
            ).reshape(nb * model.t, model.h)
            enc_grads, _ = enc.backprop(enc_caches, d_blocks)
            pred.apply_grads(pred_grads, hyper.lr1, vel_pred, hyper.momentum)
            enc.apply_grads(enc_grads, hyper.lr1, vel_enc, hyper.momentum)
            epoch_loss += loss * len(batch)
        losses.append(epoch_loss / n)
    return losses


# ---------------------------------------------------------------------------
# Hyperparameter search


def random_hyper(rng: np.random.Generator, base: EstimatorHyper) -> EstimatorHyper:
    """One draw of the searchable knobs, keeping the rest of ``base``."""
    return replace(
        base,
        h=int(rng.choice([8, 16, 24])),
        encoder_hidden=(int(rng.choice([32, 64, 96])),),
        predictor_hidden=(int(rng.choice([16, 32, 64])),),
        decoder_hidden=(int(rng.choice([32, 64, 96])),),
        dropout_p=float(rng.choice([0.05, 0.1, 0.2])),
        lr1=float(rng.choice([0.005, 0.01, 0.02])),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def train_best(
    x2: np.ndarray,
    x1: np.ndarray,
    y: np.ndarray,
    x2_test: np.ndarray,
    y_test: np.ndarray,
    t: int,
    dim1: int,
    dim2: int,
    base: EstimatorHyper,
    n_draws: int = 3,
    seed: int = 0,
) -> tuple[EstimatorModel, EstimatorHyper, TrainDiagnostics]:
    """Train ``n_draws`` phase-1 candidates and keep the one with the lowest
    median test error; phase 2 then runs only for the winner."""
    if n_draws < 1:
        raise ValueError("need at least one hyperparameter draw")
    rng = np.random.default_rng(seed)
    candidates = [random_hyper(rng, base) for _ in range(n_draws)]
    best = None
    for hyper in candidates:
        model = build_model(t, dim1, dim2, hyper)
        losses = _train_phase1(model, x2, np.asarray(y, dtype=float), hyper)
        model.trained_phase1 = True
        err = float(np.median(np.abs(model.predict_plain(x2_test) - y_test)))
        if best is None or err < best[0]:
            best = (err, model, hyper, losses)
    _, model, hyper, losses = best
    diag = TrainDiagnostics(phase1_losses=losses)
    diag.encoder_digest_before_phase2 = model.encoder.params_digest()
    diag.predictor_digest_before_phase2 = model.predictor.params_digest()
    blocks, _ = model.encode_batch(x2)
    result = train(
        model.decoder,
        blocks.reshape(len(x2), model.t * model.h),
        np.asarray(x1, dtype=float),
        epochs=hyper.phase2_epochs,
        batch_size=hyper.batch_size,
        learning_rate=hyper.lr2,
        seed=hyper.seed + 11,
        momentum=hyper.momentum,
    )
    diag.phase2_losses = result.losses
    diag.encoder_digest_after_phase2 = model.encoder.params_digest()
    diag.predictor_digest_after_phase2 = model.predictor.params_digest()
    model.trained_phase2 = True
    return model, hyper, diag


# ---------------------------------------------------------------------------
# Persistence


def model_to_dict(model: EstimatorModel) -> dict:
    return {
        "format": MODEL_FORMAT_VERSION,
        "t": model.t,
        "dim1": model.dim1,
        "dim2": model.dim2,
        "h": model.h,
        "mc_passes": model.mc_passes,
        "trained_phase1": model.trained_phase1,
        "trained_phase2": model.trained_phase2,
        "thresholds": model.thresholds.to_dict() if model.thresholds else None,
        "encoder": net_to_dict(model.encoder),
        "decoder": net_to_dict(model.decoder),
        "predictor": net_to_dict(model.predictor),
    }


def model_from_dict(data: dict) -> EstimatorModel:
    if data.get("format") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {data.get('format')!r}")
    thresholds = data.get("thresholds")
    return EstimatorModel(
        encoder=net_from_dict(data["encoder"]),
        decoder=net_from_dict(data["decoder"]),
        predictor=net_from_dict(data["predictor"]),
        t=data["t"],
        dim1=data["dim1"],
        dim2=data["dim2"],
        h=data["h"],
        mc_passes=data["mc_passes"],
        thresholds=FilterConfig.from_dict(thresholds) if thresholds else None,
        trained_phase1=data["trained_phase1"],
        trained_phase2=data["trained_phase2"],
    )


def save_model(model: EstimatorModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> EstimatorModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
