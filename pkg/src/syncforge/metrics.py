"""Alignment-sensitive and offset-agreement metrics."""

import numpy as np
import scipy.fft

from . import validation

MCD_CONSTANT = 10.0 / np.log(10.0)


def mel_cepstra(log_mel, n_coefficients=13):
    """Mel cepstra from log-mel energies: orthonormal DCT-II over channels,
    keeping coefficients 1..n (the energy coefficient c0 is dropped)."""
    m = validation.check_matrix(log_mel, "log-mel matrix")
    if m.shape[1] <= n_coefficients:
        raise ValueError(
            f"need more than {n_coefficients} mel channels, got {m.shape[1]}")
    return scipy.fft.dct(m, type=2, axis=1, norm="ortho")[:, 1:n_coefficients + 1]


def mcd(cepstra_a, cepstra_b):
    """Mel cepstral distortion in dB: the mean over frames of
    (10 / ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2)."""
    a = validation.check_matrix(cepstra_a, "first cepstra")
    b = validation.check_matrix(cepstra_b, "second cepstra")
    if a.shape != b.shape:
        raise ValueError(f"cepstra shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    per_frame = np.sqrt(2.0 * (d * d).sum(axis=1))
    return float(MCD_CONSTANT * per_frame.mean())


def offset_r2(predicted, reference):
    """Coefficient of determination between paired offset series:
    1 - sum((ref - pred)^2) / sum((ref - mean(ref))^2). Can be negative."""
    p = validation.as_float_array(predicted, "predicted offsets").ravel()
    r = validation.as_float_array(reference, "reference offsets").ravel()
    if p.size != r.size:
        raise ValueError(f"offset series lengths differ: {p.size} vs {r.size}")
    if p.size < 2:
        raise ValueError("need at least two paired offsets")
    ss_tot = float(((r - r.mean()) ** 2).sum())
    if ss_tot < 1e-12:
        raise ValueError("R^2 undefined: reference offsets have zero variance")
    ss_res = float(((r - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot
