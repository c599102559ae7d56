"""Input validation helpers shared by the public entry points."""

import numpy as np


def as_float_array(x, name="array"):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_waveform(x, name="waveform"):
    """Validate a mono waveform: 1-D, finite, amplitudes within [-1, 1]."""
    arr = as_float_array(x, name)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and np.abs(arr).max() > 1.0 + 1e-9:
        raise ValueError(f"{name} amplitudes must lie in [-1, 1]")
    return arr


def check_matrix(x, name="matrix"):
    """Validate a time-major (frames x channels) matrix."""
    arr = as_float_array(x, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (frames x channels), got shape {arr.shape}")
    return arr


def check_mask(mask, length=None, name="mask"):
    """Validate a 0/1 time mask with at least one valid frame."""
    arr = np.asarray(mask, dtype=np.float64).ravel()
    if not np.all(np.isin(arr, (0.0, 1.0))):
        raise ValueError(f"{name} entries must be 0 or 1")
    if length is not None and arr.size != length:
        raise ValueError(f"{name} length {arr.size} does not match sequence length {length}")
    if arr.sum() < 1:
        raise ValueError(f"{name} must mark at least one frame valid")
    return arr


def check_same_length(a, b, name_a="first", name_b="second"):
    if len(a) != len(b):
        raise ValueError(f"{name_a} length {len(a)} does not match {name_b} length {len(b)}")
