"""On-disk formats: FMAT matrices and PCM16 WAV audio.

FMAT is the toolkit's binary matrix container: the magic bytes ``FMAT``,
a little-endian u32 row count, a little-endian u32 column count, then
rows * cols little-endian float32 values in row-major (time-major) order.

WAV support is deliberately narrow: RIFF/WAVE, PCM16 little-endian,
mono, 16 kHz. Anything else is rejected with a diagnostic naming the
offending field.
"""

import os
import struct
import tempfile

import numpy as np

from .dsp import SAMPLE_RATE

FMAT_MAGIC = b"FMAT"


def _atomic_write(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_fmat(path, matrix):
    """Write a 2-D array as FMAT (values stored as float32)."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"FMAT stores 2-D matrices, got shape {arr.shape}")
    header = FMAT_MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1])
    _atomic_write(path, header + arr.astype("<f4").tobytes())


def read_fmat(path):
    """Read an FMAT file; returns a float64 array of shape (rows, cols)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != FMAT_MAGIC:
        raise ValueError(f"{path}: not an FMAT file (bad magic)")
    rows, cols = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * rows * cols
    if len(blob) != expected:
        raise ValueError(f"{path}: truncated FMAT payload "
                         f"(expected {expected} bytes, got {len(blob)})")
    data = np.frombuffer(blob, dtype="<f4", offset=12)
    return data.reshape(rows, cols).astype(np.float64)


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    """Write mono float samples in [-1, 1] as PCM16 WAV."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("write_wav expects a mono 1-D waveform")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate,
                                    sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(data))
    _atomic_write(path, header + data)


def read_wav(path):
    """Read a PCM16 mono 16 kHz WAV file; returns float64 samples in [-1, 1)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        chunk_id = blob[pos:pos + 4]
        (size,) = struct.unpack("<I", blob[pos + 4:pos + 8])
        body = blob[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None or len(fmt) < 16:
        raise ValueError(f"{path}: missing fmt chunk")
    if data is None:
        raise ValueError(f"{path}: missing data chunk")
    audio_format, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format != 1:
        raise ValueError(f"{path}: audio_format is {audio_format}, want 1 (PCM)")
    if channels != 1:
        raise ValueError(f"{path}: channels is {channels}, want 1 (mono)")
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: sample_rate is {rate}, want {SAMPLE_RATE}")
    if bits != 16:
        raise ValueError(f"{path}: bits_per_sample is {bits}, want 16")
    pcm = np.frombuffer(data, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0
