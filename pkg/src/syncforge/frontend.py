"""Shift-search time alignment of a generated audio against a reference.

Sixty-one shift proposals from -300 ms to +300 ms in 10 ms steps are
scored by the mean squared error between the channel-normalized mel
spectrograms of the two signals. Because one step equals exactly one mel
hop, proposals act as integer frame shifts of mels computed once per
signal; the comparison skips frames whose analysis window touches the
padded signal boundary. The winning shift is applied to the generated
audio in the sample domain, and the frontend offset is its negative:
a positive offset means the generated audio lags the reference.
"""

from dataclasses import dataclass

import numpy as np

from . import dsp, metrics, validation


@dataclass(frozen=True)
class AlignmentResult:
    offset_ms: int                  # negative of the chosen shift
    shift_ms: int                   # shift applied to the generated audio
    mse_curve: np.ndarray           # one value per proposal, -search..+search
    aligned_generated: np.ndarray   # generated audio after the chosen shift
    min_mse: float
    step_ms: int = 10

    @property
    def shifts_ms(self):
        half = (len(self.mse_curve) - 1) // 2
        return np.arange(-half, half + 1) * self.step_ms


def _shift_samples(x, delta):
    """Delay x by delta samples (advance for negative delta), zero-filled."""
    out = np.zeros_like(x)
    if delta >= 0:
        out[delta:] = x[:len(x) - delta] if delta < len(x) else 0.0
    else:
        out[:len(x) + delta] = x[-delta:]
    return out


def align(generated, reference, *, window=dsp.WINDOW, hop=dsp.HOP,
          n_mels=dsp.N_MELS, search_ms=300, step_ms=10,
          sample_rate=dsp.SAMPLE_RATE, min_overlap_s=0.5):
    gen = validation.check_waveform(generated, "generated")
    ref = validation.check_waveform(reference, "reference")
    if step_ms * sample_rate != hop * 1000:
        raise ValueError("search step must equal one mel hop")
    if search_ms % step_ms:
        raise ValueError("search range must be a multiple of the step")
    mg = dsp.normalize_channels(dsp.mel_spectrogram(gen, window=window, hop=hop,
                                                    n_mels=n_mels, sample_rate=sample_rate))
    mr = dsp.normalize_channels(dsp.mel_spectrogram(ref, window=window, hop=hop,
                                                    n_mels=n_mels, sample_rate=sample_rate))
    edge = -(-(window // 2) // hop)  # frames whose window reaches the padding
    half = search_ms // step_ms
    min_frames = int(round(min_overlap_s * sample_rate / hop))
    curve = np.empty(2 * half + 1)
    for n in range(-half, half + 1):
        lo = max(0, -n) + edge
        hi = min(mg.shape[0], mr.shape[0] - n) - edge
        if hi - lo < min_frames:
            raise ValueError(
                f"insufficient overlap at shift {n * step_ms} ms "
                f"({max(0, hi - lo)} frames, need {min_frames})")
        d = mg[lo:hi] - mr[lo + n:hi + n]
        curve[n + half] = float((d * d).mean())
    order = sorted(range(-half, half + 1),
                   key=lambda n: (curve[n + half], abs(n), n))
    best = order[0]
    shift_ms = best * step_ms
    aligned = _shift_samples(gen, shift_ms * sample_rate // 1000)
    return AlignmentResult(offset_ms=-shift_ms, shift_ms=shift_ms,
                           mse_curve=curve, aligned_generated=aligned,
                           min_mse=float(curve[best + half]), step_ms=step_ms)


def overlap_segments(generated, reference, shift_ms, sample_rate=dsp.SAMPLE_RATE):
    """The sample ranges on which the shifted generated audio and the
    reference coexist; returns (generated_segment, reference_segment)."""
    delta = shift_ms * sample_rate // 1000
    g_lo = max(0, -delta)
    g_hi = min(len(generated), len(reference) - delta)
    if g_hi <= g_lo:
        raise ValueError("aligned signals do not overlap")
    return generated[g_lo:g_hi], reference[g_lo + delta:g_hi + delta]


def aligned_metric(generated, reference, metric="mcd", **align_kwargs):
    """Align first, then score the overlapping audio.

    metric: "mcd" for mel cepstral distortion, "mel_mse" for the mean
    squared error between channel-normalized mel spectrograms.
    """
    result = align(generated, reference, **align_kwargs)
    gen_seg, ref_seg = overlap_segments(generated, reference, result.shift_ms)
    mel_kwargs = {k: v for k, v in align_kwargs.items()
                  if k in ("window", "hop", "n_mels", "sample_rate")}
    mel_g = dsp.mel_spectrogram(gen_seg, **mel_kwargs)
    mel_r = dsp.mel_spectrogram(ref_seg, **mel_kwargs)
    if metric == "mcd":
        return metrics.mcd(metrics.mel_cepstra(mel_g), metrics.mel_cepstra(mel_r))
    if metric == "mel_mse":
        d = dsp.normalize_channels(mel_g) - dsp.normalize_channels(mel_r)
        return float((d * d).mean())
    raise ValueError(f"unknown metric {metric!r} (want 'mcd' or 'mel_mse')")
