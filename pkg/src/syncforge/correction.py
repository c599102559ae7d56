"""Offset-correction kernels and the alignment training losses.

Both corrections delay their input: frame i of the output is frame
i - lag of the input (for the soft variant, a probability-weighted blend
of such delays). They therefore re-align a sequence whose content leads
the reference by `lag` frames. The soft correction clips the kernel at
the sequence edges instead of renormalizing, so edge frames average
fewer taps; every frame stays part of the loss. The hard correction
zeroes the frames that fall outside the input and excludes exactly those
from the loss.
"""

from dataclasses import dataclass

import numpy as np

from . import sync, validation
from .sync import OffsetDistribution, argmax_lag, offset_distribution


def soft_combine(probs, frames, radius):
    """out[i] = sum_k probs[k + radius] * frames[i - k], k clipped to valid rows."""
    t = frames.shape[0]
    out = np.zeros_like(frames)
    for k in range(-radius, radius + 1):
        lo = max(0, k)
        hi = t + min(0, k)
        if hi > lo:
            out[lo:hi] += probs[k + radius] * frames[lo - k:hi - k]
    return out


def soft_correct(frames, dist):
    """Blend delayed copies of the sequence, weighted by the offset distribution.

    Returns (corrected, valid) where valid marks every frame (the kernel is
    clipped at the edges rather than dropped frames being excluded).
    """
    m = validation.check_matrix(frames, "frames")
    if not isinstance(dist, OffsetDistribution):
        raise TypeError("soft_correct needs an OffsetDistribution")
    if m.shape[0] <= 2 * dist.radius:
        raise ValueError("sequence shorter than kernel support")
    out = soft_combine(dist.probs, m, dist.radius)
    return out, np.ones(m.shape[0], dtype=bool)


def hard_correct(frames, lag):
    """Delay the sequence by `lag` frames (advance for negative lags).

    Frames with no source row are zeroed and marked invalid: the leading
    `lag` frames for positive lags, the trailing |lag| frames for negative.
    """
    m = validation.check_matrix(frames, "frames")
    t = m.shape[0]
    lag = int(lag)
    if abs(lag) >= t:
        raise ValueError(f"lag {lag} out of range for {t} frames")
    out = np.zeros_like(m)
    valid = np.zeros(t, dtype=bool)
    lo = max(0, lag)
    hi = t + min(0, lag)
    out[lo:hi] = m[lo - lag:hi - lag]
    valid[lo:hi] = True
    return out, valid


def masked_frame_mse(reference, corrected, valid=None):
    """Mean squared error over the valid frames, all channels."""
    a = validation.check_matrix(reference, "reference")
    b = validation.check_matrix(corrected, "corrected")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if valid is None:
        valid = np.ones(a.shape[0], dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.sum() == 0:
        raise ValueError("no valid frames to compare")
    d = a[valid] - b[valid]
    return float((d * d).mean())


def soft_correction_loss(reference, corrected, valid=None):
    return masked_frame_mse(reference, corrected, valid)


def hard_correction_loss(reference, corrected, valid):
    return masked_frame_mse(reference, corrected, valid)


def self_sync_loss(dist):
    """Negative log-probability of the zero lag."""
    if not isinstance(dist, OffsetDistribution):
        raise TypeError("self_sync_loss needs an OffsetDistribution")
    return float(-np.log(dist.prob_at(0)))


@dataclass(frozen=True)
class CorrectionOutcome:
    soft_loss: float
    hard_loss: float
    lag: int
    distribution: OffsetDistribution


def correction_step(video_frames, reference, reconstruction, params, *,
                    radius=20, temperature=0.07, mask=None):
    """One full evaluation pass of the offset corrector.

    Estimates the offset distribution from the 25 Hz video features and the
    reference matrix (never the reconstruction), applies both corrections to
    the reconstruction, and returns the two losses plus the chosen lag.
    """
    v = sync.extract_local(video_frames, params.video, is_video=True)
    u = sync.extract_local(reference, params.audio, is_video=False)
    validation.check_same_length(v, u, "upsampled video embeddings", "reference embeddings")
    s = sync.sync_vector(v, u, mask, radius=radius)
    dist = offset_distribution(s, temperature)
    lag = argmax_lag(dist)
    soft, soft_valid = soft_correct(reconstruction, dist)
    hard, hard_valid = hard_correct(reconstruction, lag)
    return CorrectionOutcome(
        soft_loss=soft_correction_loss(reference, soft, soft_valid),
        hard_loss=hard_correction_loss(reference, hard, hard_valid),
        lag=lag,
        distribution=dist,
    )
