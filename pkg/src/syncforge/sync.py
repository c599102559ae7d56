"""Local feature extraction and masked sliding cross-correlation.

Lag convention used throughout the toolkit: a positive lag k means the
first sequence lags (runs late relative to) the second by k frames, so
frame i of the first sequence matches frame i - k of the second. With
10 ms frames, a lag of k corresponds to an offset of 10 * k milliseconds.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from . import dsp, validation

NORM_EPS = 1e-5      # epsilon inside the learned standardization layers
ROW_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class SyncVector:
    """Per-lag correlation scores over lags -radius..radius."""
    values: np.ndarray
    radius: int
    normalized: bool

    @property
    def lags(self):
        return np.arange(-self.radius, self.radius + 1)


@dataclass(frozen=True)
class OffsetDistribution:
    """Categorical distribution over lags -radius..radius."""
    probs: np.ndarray
    radius: int
    temperature: float

    @property
    def lags(self):
        return np.arange(-self.radius, self.radius + 1)

    def prob_at(self, lag):
        if abs(lag) > self.radius:
            raise ValueError(f"lag {lag} outside radius {self.radius}")
        return float(self.probs[lag + self.radius])


@dataclass
class ExtractorParams:
    """Weights of one local feature extractor.

    Layers: Conv1D (kernel 3, same padding), per-channel standardization
    with learned affine, GELU, Conv1D (kernel 1), the same norm/GELU,
    then a linear map followed by row-wise L2 normalization.
    """
    conv1_w: np.ndarray   # (3, d_in, d_hidden)
    conv1_b: np.ndarray   # (d_hidden,)
    norm1_scale: np.ndarray
    norm1_shift: np.ndarray
    conv2_w: np.ndarray   # (1, d_hidden, d_hidden)
    conv2_b: np.ndarray
    norm2_scale: np.ndarray
    norm2_shift: np.ndarray
    fc_w: np.ndarray      # (d_hidden, d_embed)
    fc_b: np.ndarray      # (d_embed,)

    @property
    def d_in(self):
        return self.conv1_w.shape[1]

    @property
    def d_embed(self):
        return self.fc_w.shape[1]

    def to_flat(self, prefix=""):
        sep = "." if prefix else ""
        return {f"{prefix}{sep}{f.name}": getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_flat(cls, weights, prefix=""):
        sep = "." if prefix else ""
        kwargs = {}
        for f in fields(cls):
            key = f"{prefix}{sep}{f.name}"
            if key not in weights:
                raise KeyError(f"missing tensor {key}")
            kwargs[f.name] = np.asarray(weights[key], dtype=np.float64)
        return cls(**kwargs)


def init_extractor_params(d_in, d_hidden, d_embed, rng):
    """Fresh extractor weights: uniform(-a, a) with a = sqrt(1/(fan_in*kernel))
    for weights, zeros for biases and shifts, ones for norm scales."""
    a1 = math.sqrt(1.0 / (3 * d_in))
    a2 = math.sqrt(1.0 / d_hidden)
    return ExtractorParams(
        conv1_w=rng.uniform(-a1, a1, (3, d_in, d_hidden)),
        conv1_b=np.zeros(d_hidden),
        norm1_scale=np.ones(d_hidden),
        norm1_shift=np.zeros(d_hidden),
        conv2_w=rng.uniform(-a2, a2, (1, d_hidden, d_hidden)),
        conv2_b=np.zeros(d_hidden),
        norm2_scale=np.ones(d_hidden),
        norm2_shift=np.zeros(d_hidden),
        fc_w=rng.uniform(-a2, a2, (d_hidden, d_embed)),
        fc_b=np.zeros(d_embed),
    )


# ---------------------------------------------------------------------------
# numeric kernels (shared with the gradient engine)

def conv1d_same(x, w, b):
    """Same-padding 1-D convolution over time. x: (T, d_in), w: (k, d_in, d_out)."""
    k = w.shape[0]
    c = k // 2
    t = x.shape[0]
    out = np.tile(b, (t, 1)).astype(np.float64)
    for j in range(k):
        lo = max(0, c - j)
        hi = min(t, t + c - j)
        out[lo:hi] += x[lo + j - c:hi + j - c] @ w[j]
    return out


def standardize_affine(x, scale, shift, eps=NORM_EPS):
    """Per-channel standardization over time (biased variance) with affine."""
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return (x - mu) / np.sqrt(var + eps) * scale + shift


def gelu(x):
    """GELU via the tanh approximation."""
    inner = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def l2_normalize_rows(x, floor=ROW_NORM_FLOOR):
    """Scale each row to unit L2 norm; rows with norm below floor become zero."""
    norms = np.sqrt((x ** 2).sum(axis=1))
    safe = np.where(norms >= floor, norms, 1.0)
    out = x / safe[:, None]
    out[norms < floor] = 0.0
    return out


def upsample_positions(n_in, factor):
    """Source positions for linear upsampling: t_out / factor clamped to [0, n_in-1]."""
    pos = np.minimum(np.arange(n_in * factor) / factor, n_in - 1.0)
    idx0 = np.floor(pos).astype(np.intp)
    idx1 = np.minimum(idx0 + 1, n_in - 1)
    w1 = pos - idx0
    return idx0, idx1, w1


def upsample_linear(frames, factor=4):
    """Linearly interpolate a feature sequence to factor-times the frame rate."""
    x = validation.check_matrix(frames, "feature sequence")
    if not isinstance(factor, int) or factor < 2:
        raise ValueError("factor must be an integer >= 2")
    if x.shape[0] < 2:
        raise ValueError("need at least two frames to interpolate")
    idx0, idx1, w1 = upsample_positions(x.shape[0], factor)
    return x[idx0] * (1.0 - w1)[:, None] + x[idx1] * w1[:, None]


def sync_values(v, u, mask, radius, normalized=True):
    """Raw kernel behind sync_vector; returns (values, counts) arrays of
    length 2*radius + 1. counts[k] is the mask total over the window the
    lag-k comparison slides across."""
    t = v.shape[0]
    vm = v * mask[:, None]
    um = u * mask[:, None]
    csum = np.concatenate(([0.0], np.cumsum(mask)))
    values = np.zeros(2 * radius + 1)
    counts = np.zeros(2 * radius + 1)
    for k in range(-radius, radius + 1):
        lo = max(0, k)
        hi = t + min(0, k)
        num = float(np.einsum("td,td->", vm[lo:hi], um[lo - k:hi - k])) if hi > lo else 0.0
        cnt = csum[min(t, t + k)] - csum[max(0, k)]
        if normalized:
            values[k + radius] = num / cnt if cnt > 0 else 0.0
        else:
            values[k + radius] = num
        counts[k + radius] = cnt
    return values, counts


def softmax_with_temperature(values, temperature):
    z = (values - values.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# public operations

def extract_local(frames, params, is_video):
    """Run one local feature extractor; returns unit-row embeddings at the
    mel frame rate. Video input is linearly upsampled 4x first."""
    x = validation.check_matrix(frames, "feature sequence")
    if is_video:
        x = upsample_linear(x, 4)
    if x.shape[1] != params.d_in:
        raise ValueError(
            f"input has {x.shape[1]} channels but extractor expects {params.d_in}")
    h = gelu(standardize_affine(conv1d_same(x, params.conv1_w, params.conv1_b),
                                params.norm1_scale, params.norm1_shift))
    h = gelu(standardize_affine(conv1d_same(h, params.conv2_w, params.conv2_b),
                                params.norm2_scale, params.norm2_shift))
    return l2_normalize_rows(h @ params.fc_w + params.fc_b)


def sync_vector(v, u, mask=None, radius=20, normalized=True):
    """Masked sliding cross-correlation between two embedding sequences.

    value[k] = sum_i mask[i] * mask[i-k] * <v[i], u[i-k]> over the valid
    overlap, optionally divided by the mask count over the lag-k window.
    Lags whose window holds no valid frames yield 0.
    """
    v = validation.check_matrix(v, "first sequence")
    u = validation.check_matrix(u, "second sequence")
    if v.shape != u.shape:
        raise ValueError(f"sequence shapes differ: {v.shape} vs {u.shape}")
    t = v.shape[0]
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if radius >= t:
        raise ValueError(f"radius {radius} must be smaller than length {t}")
    if mask is None:
        mask = np.ones(t)
    else:
        mask = validation.check_mask(mask, t)
    values, _ = sync_values(v, u, mask, radius, normalized)
    return SyncVector(values=values, radius=radius, normalized=normalized)


def offset_distribution(sync, temperature):
    """Temperature softmax over a synchronization vector."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    values = sync.values if isinstance(sync, SyncVector) else np.asarray(sync, float)
    radius = (len(values) - 1) // 2
    probs = softmax_with_temperature(values, temperature)
    return OffsetDistribution(probs=probs, radius=radius, temperature=float(temperature))


def argmax_lag(dist):
    """Most probable lag. Exact ties resolve to the smallest |lag|, and a
    remaining +-k tie resolves to the negative lag."""
    probs = dist.probs if isinstance(dist, OffsetDistribution) else np.asarray(dist, float)
    radius = (len(probs) - 1) // 2
    lags = np.arange(-radius, radius + 1)
    best = probs.max()
    candidates = lags[probs == best]
    return int(min(candidates, key=lambda k: (abs(k), k)))


def oracle_features(frames, is_video):
    """Correlation-ready features without learned extractors: channel
    standardization followed by row L2 normalization (video upsampled 4x)."""
    x = validation.check_matrix(frames, "feature sequence")
    if is_video:
        x = upsample_linear(x, 4)
    return l2_normalize_rows(dsp.normalize_channels(x))


@dataclass(frozen=True)
class OffsetEstimate:
    sync: SyncVector
    distribution: OffsetDistribution
    lag: int

    @property
    def offset_ms(self):
        return self.lag * 10


def estimate_offset(video_frames, reference, params=None, *, radius=20,
                    temperature=0.07, mask=None, normalized=True):
    """Estimate the lag of a 25 Hz feature stream against a 100 Hz reference.

    With params (a pair of trained extractors, see training.PredictorParams)
    the learned embeddings are used; otherwise both streams are compared
    directly after channel standardization and row normalization, which
    requires equal channel counts. Sequences are trimmed to the shorter
    common length before correlation.
    """
    video_frames = validation.check_matrix(video_frames, "video features")
    reference = validation.check_matrix(reference, "reference")
    if params is not None:
        v = extract_local(video_frames, params.video, is_video=True)
        u = extract_local(reference, params.audio, is_video=False)
    else:
        if video_frames.shape[1] != reference.shape[1]:
            raise ValueError(
                "oracle-feature estimation needs matching channel counts, got "
                f"{video_frames.shape[1]} and {reference.shape[1]}")
        v = oracle_features(video_frames, is_video=True)
        u = oracle_features(reference, is_video=False)
    t = min(v.shape[0], u.shape[0])
    v, u = v[:t], u[:t]
    if mask is not None:
        mask = validation.check_mask(mask, None)[:t]
    s = sync_vector(v, u, mask, radius=radius, normalized=normalized)
    d = offset_distribution(s, temperature)
    return OffsetEstimate(sync=s, distribution=d, lag=argmax_lag(d))
