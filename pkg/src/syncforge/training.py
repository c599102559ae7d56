"""Training of the offset predictor on synthetic pairs.

Two independent predictors are trained side by side: the data-offset
predictor learns from the soft correction loss (the reconstruction is
gradient-stopped inside it, so only the predictor moves), and the
self-synchronization predictor learns from the negative log-probability
of the zero lag against the reconstruction. The hard correction loss is
tracked for monitoring; it has no gradient path of its own because the
chosen lag is an argmax.

All math runs in float64. Training is bitwise deterministic for a fixed
seed, dataset, and config.
"""

import json
import math
import os
from collections import Counter
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from . import correction, formats, sync

SIDES = ("data.video", "data.audio", "self.video", "self.audio")


@dataclass(frozen=True)
class TrainConfig:
    radius: int = 20
    temperature: float = 0.07
    ssm_weight: float = 1.0
    learning_rate: float = 5e-4
    warmup_steps: int = 1000
    total_steps: int = 2000
    batch_size: int = 1
    hidden_dim: int = 128
    embed_dim: int = 64
    seed: int = 0
    log_every: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.radius < 1 or self.temperature <= 0 or self.total_steps < 1:
            raise ValueError("invalid training configuration")
        if self.warmup_steps < 0 or self.batch_size < 1:
            raise ValueError("invalid training configuration")
        return self


@dataclass(frozen=True)
class TrainingSample:
    """One synthetic pair: 25 Hz video features, the reference matrix, a
    reconstruction that leads the reference by `lag` frames, and that lag."""
    video: np.ndarray
    mel: np.ndarray
    recon: np.ndarray
    lag: int


@dataclass
class PredictorParams:
    video: sync.ExtractorParams
    audio: sync.ExtractorParams


@dataclass
class TrainResult:
    weights: dict
    log: list = field(default_factory=list)


class TrainingDivergedError(RuntimeError):
    def __init__(self, step):
        super().__init__(f"training diverged (non-finite loss) at step {step}")
        self.step = step


def init_weights(d_video, d_mel, config, seed=None):
    """Fresh weights for both predictors, keyed 'data.video.conv1_w' etc."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    weights = {}
    for side in SIDES:
        d_in = d_video if side.endswith("video") else d_mel
        params = sync.init_extractor_params(d_in, config.hidden_dim, config.embed_dim, rng)
        weights.update(params.to_flat(side))
    return weights


def side_params(weights, side):
    return sync.ExtractorParams.from_flat(weights, side)


def predictor_params(weights, which="data"):
    return PredictorParams(video=side_params(weights, f"{which}.video"),
                           audio=side_params(weights, f"{which}.audio"))


def learning_rate_at(step, config):
    """Linear warm-up to the peak rate, then cosine annealing to zero."""
    if config.warmup_steps > 0 and step <= config.warmup_steps:
        return config.learning_rate * step / config.warmup_steps
    span = max(1, config.total_steps - config.warmup_steps)
    progress = min(1.0, (step - config.warmup_steps) / span)
    return config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


def _embedding_graph(x, wvars, side, upsample):
    h = ad.upsample_linear(x, 4) if upsample else x
    h = ad.conv1d_same(h, wvars[f"{side}.conv1_w"], wvars[f"{side}.conv1_b"])
    h = ad.gelu(ad.standardize_affine(h, wvars[f"{side}.norm1_scale"],
                                      wvars[f"{side}.norm1_shift"]))
    h = ad.conv1d_same(h, wvars[f"{side}.conv2_w"], wvars[f"{side}.conv2_b"])
    h = ad.gelu(ad.standardize_affine(h, wvars[f"{side}.norm2_scale"],
                                      wvars[f"{side}.norm2_shift"]))
    h = ad.add_bias(ad.matmul(h, wvars[f"{side}.fc_w"]), wvars[f"{side}.fc_b"])
    return ad.l2_normalize_rows(h)


def alignment_graph(sample, wvars, config, include_self=True):
    """Differentiable loss graph for one sample.

    Returns (total, parts) where parts holds the soft, hard, and
    self-sync components plus the chosen lag. The reconstruction enters
    the soft correction through a stop_gradient node, and the hard loss
    is a constant (its lag comes from an argmax), so only the two
    predictors receive gradients.
    """
    video = ad.Var(sample.video)
    mel = ad.Var(sample.mel)
    recon = ad.Var(sample.recon)
    t = sample.mel.shape[0]
    mask = np.ones(t)

    v = _embedding_graph(video, wvars, "data.video", upsample=True)
    u = _embedding_graph(mel, wvars, "data.audio", upsample=False)
    s = ad.sync_correlate(v, u, mask, config.radius)
    probs = ad.softmax_temp(s, config.temperature)
    soft = ad.soft_shift_mix(probs, ad.stop_gradient(recon))
    soft_loss = ad.masked_mse(soft, mel)

    lag = sync.argmax_lag(probs.value)
    hard, hard_valid = correction.hard_correct(sample.recon, lag)
    hard_loss = correction.hard_correction_loss(sample.mel, hard, hard_valid)
    total = ad.add(soft_loss, ad.Var(hard_loss))

    parts = {"soft": soft_loss, "hard": hard_loss, "lag": lag, "recon": recon}
    if include_self:
        vs = _embedding_graph(video, wvars, "self.video", upsample=True)
        us = _embedding_graph(recon, wvars, "self.audio", upsample=False)
        ps = ad.softmax_temp(ad.sync_correlate(vs, us, mask, config.radius),
                             config.temperature)
        self_loss = ad.neg_log_at(ps, config.radius)
        total = ad.add(total, ad.scale(self_loss, config.ssm_weight))
        parts["self"] = self_loss
    return total, parts


def _adam_init(weights):
    return ({k: np.zeros_like(v) for k, v in weights.items()},
            {k: np.zeros_like(v) for k, v in weights.items()})


def _adam_step(weights, grads, m, v, lr, step, config):
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    for key, g in grads.items():
        m[key] = b1 * m[key] + (1.0 - b1) * g
        v[key] = b2 * v[key] + (1.0 - b2) * g * g
        mhat = m[key] / (1.0 - b1 ** step)
        vhat = v[key] / (1.0 - b2 ** step)
        weights[key] = weights[key] - lr * mhat / (np.sqrt(vhat) + eps)


def train_offset_predictor(dataset, weights, config):
    """Train both predictors on the dataset; returns updated weights and a log.

    Samples are visited in dataset order, wrapping around. Each log record
    carries the step, the mean losses of the step's batch, the learning
    rate, and a histogram of the lags chosen since the previous record.
    Raises TrainingDivergedError as soon as a loss turns non-finite.
    """
    config.validate()
    if not dataset:
        raise ValueError("training dataset is empty")
    weights = {k: np.array(v, dtype=np.float64, copy=True) for k, v in weights.items()}
    m, v = _adam_init(weights)
    log = []
    hist = Counter()
    n = len(dataset)
    cursor = 0
    for step in range(1, config.total_steps + 1):
        grads = {k: np.zeros_like(val) for k, val in weights.items()}
        losses = {"soft": 0.0, "hard": 0.0, "self": 0.0, "total": 0.0}
        for _ in range(config.batch_size):
            sample = dataset[cursor % n]
            cursor += 1
            wvars = {k: ad.Var(val) for k, val in weights.items()}
            total, parts = alignment_graph(sample, wvars, config)
            if not np.isfinite(total.value):
                raise TrainingDivergedError(step)
            ad.backward(total)
            for k in grads:
                grads[k] += wvars[k].grad
            losses["soft"] += float(parts["soft"].value)
            losses["hard"] += parts["hard"]
            losses["self"] += float(parts["self"].value)
            losses["total"] += float(total.value)
            hist[parts["lag"]] += 1
        for k in grads:
            grads[k] /= config.batch_size
        lr = learning_rate_at(step, config)
        _adam_step(weights, grads, m, v, lr, step, config)
        if step % config.log_every == 0 or step == config.total_steps:
            log.append({
                "step": step,
                "soft_loss": losses["soft"] / config.batch_size,
                "hard_loss": losses["hard"] / config.batch_size,
                "ssm_loss": losses["self"] / config.batch_size,
                "lr": lr,
                "lag_histogram": {str(k): hist[k] for k in sorted(hist)},
            })
            hist = Counter()
    return TrainResult(weights=weights, log=log)


def predict_lag(weights, video, reference, config):
    """Lag prediction with the trained data-offset predictor."""
    est = sync.estimate_offset(video, reference,
                               params=predictor_params(weights, "data"),
                               radius=config.radius,
                               temperature=config.temperature)
    return est.lag


def exact_lag_accuracy(weights, samples, config):
    hits = sum(predict_lag(weights, s.video, s.mel, config) == s.lag for s in samples)
    return hits / len(samples)


def mean_self_sync_loss(weights, samples, config):
    """Mean zero-lag NLL of the self-synchronization predictor over samples."""
    params = predictor_params(weights, "self")
    total = 0.0
    for s in samples:
        est = sync.estimate_offset(s.video, s.recon, params=params,
                                   radius=config.radius,
                                   temperature=config.temperature)
        total += correction.self_sync_loss(est.distribution)
    return total / len(samples)


# ---------------------------------------------------------------------------
# checkpoints: one FMAT per tensor plus a manifest with names and shapes

def save_checkpoint(directory, weights, config):
    os.makedirs(directory, exist_ok=True)
    tensors = []
    for i, name in enumerate(sorted(weights)):
        arr = np.asarray(weights[name], dtype=np.float64)
        fname = f"t{i:03d}.fmat"
        flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
        formats.write_fmat(os.path.join(directory, fname), flat)
        tensors.append({"name": name, "shape": list(arr.shape), "file": fname})
    manifest = {"format": "fmat-bundle", "config": asdict(config), "tensors": tensors}
    payload = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    formats._atomic_write(os.path.join(directory, "manifest.json"), payload.encode())


def load_checkpoint(directory):
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    weights = {}
    for entry in manifest["tensors"]:
        flat = formats.read_fmat(os.path.join(directory, entry["file"]))
        weights[entry["name"]] = flat.reshape(entry["shape"])
    known = set(TrainConfig.__dataclass_fields__)
    cfg_kwargs = {k: v for k, v in manifest.get("config", {}).items() if k in known}
    return weights, TrainConfig(**cfg_kwargs)
