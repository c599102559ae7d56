"""Waveform to log-mel-spectrogram pipeline and channel normalization.

All entry points assume mono audio at 16 kHz. Spectrogram frames are
centered: frame t covers samples [t*hop - window/2, t*hop + window/2)
after reflection padding of window/2 samples on both ends, so a signal
of N samples yields ceil(N / hop) frames (exactly 100 frames per second
of audio with the default hop of 160).
"""

import numpy as np

from . import validation

SAMPLE_RATE = 16000
WINDOW = 640
HOP = 160
N_MELS = 80
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-10

_FB_CACHE = {}


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, window=WINDOW, sample_rate=SAMPLE_RATE,
                   f_min=F_MIN, f_max=F_MAX):
    """Triangular mel filterbank, shape (n_mels, window // 2 + 1)."""
    n_bins = window // 2 + 1
    freqs = np.arange(n_bins) * (sample_rate / window)
    pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, ctr, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    rising = (freqs[None, :] - lo) / np.maximum(ctr - lo, 1e-12)
    falling = (hi - freqs[None, :]) / np.maximum(hi - ctr, 1e-12)
    return np.clip(np.minimum(rising, falling), 0.0, None)


def default_filterbank(n_mels=N_MELS, window=WINDOW, sample_rate=SAMPLE_RATE,
                       f_min=F_MIN, f_max=F_MAX):
    key = (n_mels, window, sample_rate, f_min, f_max)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(*key)
    return _FB_CACHE[key]


def hann_window(window):
    # periodic Hann, so a DC input leaks only into bins 0 and +-1
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)


def stft_magnitude(waveform, window=WINDOW, hop=HOP):
    """Magnitude spectrogram of Hann-windowed centered frames.

    Returns an array of shape (ceil(len(waveform) / hop), window // 2 + 1).
    """
    w = validation.check_waveform(waveform)
    if window <= 0 or hop <= 0:
        raise ValueError("window and hop must be positive")
    if window % 2:
        raise ValueError("window must be even")
    if w.size < window:
        raise ValueError("waveform too short")
    half = window // 2
    padded = np.pad(w, half, mode="reflect")
    n_frames = -(-w.size // hop)
    idx = np.arange(n_frames)[:, None] * hop + np.arange(window)[None, :]
    frames = padded[idx] * hann_window(window)
    return np.abs(np.fft.rfft(frames, axis=1))


def mel_spectrogram(waveform, filterbank=None, *, window=WINDOW, hop=HOP,
                    n_mels=N_MELS, sample_rate=SAMPLE_RATE,
                    f_min=F_MIN, f_max=F_MAX):
    """Log mel energies, shape (frames, n_mels); silence maps to log(1e-10)."""
    fb = filterbank
    if fb is None:
        fb = default_filterbank(n_mels, window, sample_rate, f_min, f_max)
    fb = np.asarray(fb, dtype=np.float64)
    if fb.ndim != 2 or fb.shape[1] != window // 2 + 1:
        raise ValueError(
            f"filterbank must have {window // 2 + 1} columns, got shape {fb.shape}")
    power = stft_magnitude(waveform, window, hop) ** 2
    return np.log(np.maximum(power @ fb.T, LOG_FLOOR))


def normalize_channels(frames):
    """Standardize each channel over time to zero mean and unit variance.

    Channels with variance below 1e-12 are zeroed out instead of divided.
    """
    m = validation.check_matrix(frames, "mel matrix")
    if m.shape[0] < 2:
        raise ValueError("need at least two frames to normalize")
    mu = m.mean(axis=0)
    var = ((m - mu) ** 2).mean(axis=0)
    out = np.zeros_like(m)
    live = var >= 1e-12
    out[:, live] = (m[:, live] - mu[live]) / np.sqrt(var[live])
    return out
