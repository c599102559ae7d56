"""Synthetic audio/feature pairs with known, injected offsets.

Every sample is cut from a longer master timeline, so shifted streams
carry real content at both ends (no zero-filled edges). Sign conventions,
shared with the rest of the toolkit:

- The video stream is delayed by the data offset: positive ``o_d`` means
  the video lags the reference, and the offset predictor should report
  ``+o_d``.
- Generated audio lags the reference by the combined offset, which is
  what the alignment frontend measures (``o_f = o_d + o_m``).
- Reconstruction matrices lead the reference by the combined offset, so
  delaying one by the true lag (the hard correction) restores alignment.

Signal kinds: "harmonic" (speech-like harmonic sweep), "bursts"
(noise bursts with a tonal floor), and "features" (feature-domain random
walk, no audio rendering needed for training). All kinds are driven by
smoothed-noise latents, so envelopes are non-stationary; offset
estimation would be degenerate on stationary signals such as pure tones.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import dsp

MARGIN_FRAMES = 64          # shift headroom on each side of the master timeline
KINDS = ("harmonic", "bursts", "features")


@dataclass(frozen=True)
class AsyncScenario:
    kind: str = "harmonic"
    duration_s: float = 1.5
    data_offset_ms: int = 0
    model_offset_ms: int = 0
    noise_snr_db: float | None = None
    seed: int = 0
    channels: int = 32       # mel channels (audio kinds) / projection width
    latent_dim: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.duration_s < 1.0:
            raise ValueError("duration must be at least 1 second")
        max_ms = (MARGIN_FRAMES - 2) * 10
        if abs(self.data_offset_ms) + abs(self.model_offset_ms) > max_ms:
            raise ValueError(f"combined offset exceeds the {max_ms} ms headroom")

    @property
    def total_offset_ms(self):
        return self.data_offset_ms + self.model_offset_ms

    @property
    def n_frames(self):
        return 4 * int(round(self.duration_s * 25))


@dataclass(frozen=True)
class GroundTruth:
    o_d_ms: int
    o_m_ms: int
    kind: str
    seed: int

    @property
    def total_ms(self):
        return self.o_d_ms + self.o_m_ms

    @property
    def lag_frames(self):
        if self.total_ms % 10:
            raise ValueError("offset is not on the 10 ms grid")
        return self.total_ms // 10


def _rng(scenario, salt):
    return np.random.default_rng((int(scenario.seed) & 0x7FFFFFFF, salt))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _smooth_latents(scenario):
    """Standardized latent channels at 100 Hz over the full master timeline,
    smoothed at mixed scales (20/40/80 ms) for sharp yet stable correlation."""
    n = scenario.n_frames + 2 * MARGIN_FRAMES
    rng = _rng(scenario, 0)
    raw = rng.standard_normal((n + 64, scenario.latent_dim))
    out = np.empty((n, scenario.latent_dim))
    widths = (2, 4, 8)
    for c in range(scenario.latent_dim):
        sigma = widths[c % len(widths)]
        support = np.arange(-3 * sigma, 3 * sigma + 1)
        kernel = np.exp(-0.5 * (support / sigma) ** 2)
        kernel /= kernel.sum()
        smoothed = np.convolve(raw[:, c], kernel, mode="same")[32:32 + n]
        mu, sd = smoothed.mean(), smoothed.std()
        out[:, c] = (smoothed - mu) / (sd if sd > 1e-12 else 1.0)
    return out


def _feature_master(scenario):
    """Latents projected to `channels` dimensions, standardized per channel."""
    lat = _smooth_latents(scenario)
    rng = _rng(scenario, 1)
    mix = rng.standard_normal((scenario.latent_dim, scenario.channels))
    mix /= np.sqrt(scenario.latent_dim)
    feats = lat @ mix
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    return (feats - mu) / np.where(sd > 1e-12, sd, 1.0)


def _audio_master(scenario):
    """Render the master waveform at 16 kHz, peak-scaled to 0.9."""
    lat = _smooth_latents(scenario)
    n_frames = lat.shape[0]
    n_samples = n_frames * dsp.HOP
    frame_pos = np.arange(n_frames, dtype=np.float64)
    sample_pos = np.arange(n_samples, dtype=np.float64) / dsp.HOP

    def at_rate(channel):
        return np.interp(sample_pos, frame_pos, channel)

    amp = at_rate(0.12 + 0.85 * _sigmoid(1.4 * lat[:, 1]))
    if scenario.kind == "bursts":
        burst = at_rate(_sigmoid(2.5 * lat[:, 0] - 1.0) ** 2)
        f0 = at_rate(260.0 + 420.0 * _sigmoid(lat[:, 2 % lat.shape[1]]))
        phase = 2.0 * math.pi * np.cumsum(f0) / dsp.SAMPLE_RATE
        noise = _rng(scenario, 2).standard_normal(n_samples)
        noise = np.convolve(noise, np.ones(3) / 3.0, mode="same")
        sig = burst * (0.8 * noise + 0.4 * np.sin(phase)) * (0.3 + 0.7 * amp)
    else:
        f0 = at_rate(120.0 + 90.0 * _sigmoid(1.2 * lat[:, 0]))
        bright = at_rate(_sigmoid(lat[:, 2 % lat.shape[1]]))
        phase = 2.0 * math.pi * np.cumsum(f0) / dsp.SAMPLE_RATE
        sig = np.zeros(n_samples)
        weight_sum = np.zeros(n_samples)
        for h in range(1, 5):
            w = (0.35 + 0.55 * bright) ** (h - 1)
            sig += w * np.sin(h * phase)
            weight_sum += w
        sig = amp * sig / weight_sum
    peak = np.abs(sig).max()
    return sig * (0.9 / peak if peak > 0 else 1.0)


def _mel_master(scenario):
    if scenario.kind == "features":
        return _feature_master(scenario)
    return dsp.mel_spectrogram(_audio_master(scenario), n_mels=scenario.channels)


def _add_noise(x, snr_db, rng):
    if snr_db is None:
        return x
    power = float((x ** 2).mean())
    sigma = math.sqrt(power * 10.0 ** (-snr_db / 10.0)) if power > 0 else 0.0
    return x + sigma * rng.standard_normal(x.shape)


def _frame_window(master, start_frame, n_frames):
    return np.array(master[start_frame:start_frame + n_frames])


def _require_grid(ms, what):
    if ms % 10:
        raise ValueError(f"{what} of {ms} ms is not a multiple of one frame (10 ms)")
    return ms // 10


def video_features(scenario, master=None):
    """25 Hz feature stream, delayed by the data offset."""
    kd = _require_grid(scenario.data_offset_ms, "data offset")
    mel = _mel_master(scenario) if master is None else master
    rows = _frame_window(mel, MARGIN_FRAMES - kd, scenario.n_frames)[::4]
    return _add_noise(rows, scenario.noise_snr_db, _rng(scenario, 10))


def gen_pair(scenario):
    """(video features at 25 Hz, reference waveform, ground truth)."""
    truth = GroundTruth(scenario.data_offset_ms, scenario.model_offset_ms,
                        scenario.kind, scenario.seed)
    master = _mel_master(scenario)
    video = video_features(scenario, master)
    if scenario.kind == "features":
        return video, None, truth
    audio = _audio_master(scenario)
    start = MARGIN_FRAMES * dsp.HOP
    ref = np.array(audio[start:start + scenario.n_frames * dsp.HOP])
    ref = np.clip(_add_noise(ref, scenario.noise_snr_db, _rng(scenario, 11)), -1.0, 1.0)
    return video, ref, truth


def gen_audio_pair(scenario):
    """(generated waveform, reference waveform, ground truth).

    The generated audio lags the reference by the combined offset; both
    are cut from the same master rendering, so the shift is content-true.
    """
    if scenario.kind == "features":
        raise ValueError("the feature-domain kind renders no audio")
    truth = GroundTruth(scenario.data_offset_ms, scenario.model_offset_ms,
                        scenario.kind, scenario.seed)
    audio = _audio_master(scenario)
    length = scenario.n_frames * dsp.HOP
    start = MARGIN_FRAMES * dsp.HOP
    delta = truth.total_ms * dsp.SAMPLE_RATE // 1000
    ref = np.array(audio[start:start + length])
    gen = np.array(audio[start - delta:start - delta + length])
    ref = np.clip(_add_noise(ref, scenario.noise_snr_db, _rng(scenario, 11)), -1.0, 1.0)
    gen = np.clip(_add_noise(gen, scenario.noise_snr_db, _rng(scenario, 12)), -1.0, 1.0)
    return gen, ref, truth


def gen_mel_pair(scenario):
    """(reference matrix, reconstruction matrix, ground truth).

    The reconstruction is the reference content advanced by the combined
    offset (so it leads the reference), optionally perturbed by noise.
    Only the sum of the two offsets matters for this pair.
    """
    kt = _require_grid(scenario.total_offset_ms, "combined offset")
    truth = GroundTruth(scenario.data_offset_ms, scenario.model_offset_ms,
                        scenario.kind, scenario.seed)
    master = _mel_master(scenario)
    mel = _frame_window(master, MARGIN_FRAMES, scenario.n_frames)
    recon = _frame_window(master, MARGIN_FRAMES + kt, scenario.n_frames)
    recon = _add_noise(recon, scenario.noise_snr_db, _rng(scenario, 13))
    return mel, recon, truth


def training_triple(scenario):
    """(video features, reference matrix, reconstruction) for one scenario
    with a zero model offset; the training label is o_d / 10 frames."""
    if scenario.model_offset_ms != 0:
        raise ValueError("training triples require a zero model offset")
    mel, recon, truth = gen_mel_pair(scenario)
    video = video_features(scenario)
    return video, mel, recon, truth


def make_training_set(count, radius=20, *, seed=0, duration_s=1.2, channels=32,
                      latent_dim=5, kind="features", noise_snr_db=None):
    """Offset dataset for training: lags are uniform on the 10 ms grid
    within [-radius, radius] frames. Returns a list of TrainingSample."""
    from .training import TrainingSample
    rng = np.random.default_rng((int(seed) & 0x7FFFFFFF, 99))
    lags = rng.integers(-radius, radius + 1, size=count)
    samples = []
    for i, lag in enumerate(lags):
        sc = AsyncScenario(kind=kind, duration_s=duration_s,
                           data_offset_ms=int(lag) * 10, model_offset_ms=0,
                           noise_snr_db=noise_snr_db, seed=seed * 1_000_003 + i,
                           channels=channels, latent_dim=latent_dim)
        video, mel, recon, truth = training_triple(sc)
        samples.append(TrainingSample(video=video, mel=mel, recon=recon,
                                      lag=truth.lag_frames))
    return samples


def make_offset_pairs(count, radius=20, *, seed=0, duration_s=1.2, channels=6,
                      latent_dim=5, noise_snr_db=None):
    """Pairs for oracle-feature estimation: (video features, reference
    matrix, true lag) with matching channel counts on both sides."""
    rng = np.random.default_rng((int(seed) & 0x7FFFFFFF, 98))
    lags = rng.integers(-radius, radius + 1, size=count)
    pairs = []
    for i, lag in enumerate(lags):
        sc = AsyncScenario(kind="features", duration_s=duration_s,
                           data_offset_ms=int(lag) * 10, model_offset_ms=0,
                           noise_snr_db=noise_snr_db, seed=seed * 1_000_003 + i,
                           channels=channels, latent_dim=latent_dim)
        master = _feature_master(sc)
        video = video_features(sc, master)
        reference = _frame_window(master, MARGIN_FRAMES, sc.n_frames)
        reference = _add_noise(reference, noise_snr_db, _rng(sc, 14))
        pairs.append((video, reference, int(lag)))
    return pairs
