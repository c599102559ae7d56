import struct

import numpy as np
import pytest

from syncforge import formats


class TestFmat:
    def test_round_trip_is_bitwise_stable(self, tmp_path):
        rng = np.random.default_rng(2)
        mat = rng.standard_normal((7, 5))
        path = tmp_path / "a.fmat"
        formats.write_fmat(path, mat)
        first = path.read_bytes()
        back = formats.read_fmat(path)
        assert back.shape == (7, 5)
        assert np.array_equal(back, mat.astype(np.float32).astype(np.float64))
        formats.write_fmat(path, back)
        assert path.read_bytes() == first

    def test_header_layout(self, tmp_path):
        path = tmp_path / "b.fmat"
        formats.write_fmat(path, np.arange(6.0).reshape(2, 3))
        blob = path.read_bytes()
        assert blob[:4] == b"FMAT"
        assert struct.unpack("<II", blob[4:12]) == (2, 3)
        assert len(blob) == 12 + 4 * 6

    def test_rejects_bad_magic_and_truncation(self, tmp_path):
        path = tmp_path / "c.fmat"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            formats.read_fmat(path)
        formats.write_fmat(path, np.ones((3, 3)))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ValueError, match="truncated"):
            formats.read_fmat(path)

    def test_rejects_non_2d(self, tmp_path):
        with pytest.raises(ValueError):
            formats.write_fmat(tmp_path / "d.fmat", np.ones(5))


class TestWav:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        wave = rng.uniform(-0.99, 0.99, 1600)
        path = tmp_path / "a.wav"
        formats.write_wav(path, wave)
        back = formats.read_wav(path)
        assert back.shape == wave.shape
        assert np.abs(back - wave).max() <= 1.0 / 32768.0
        # PCM-exact second pass
        formats.write_wav(path, back)
        assert np.array_equal(formats.read_wav(path), back)

    @pytest.mark.parametrize("field,patch,message", [
        ("audio_format", (20, struct.pack("<H", 3)), "audio_format"),
        ("channels", (22, struct.pack("<H", 2)), "channels"),
        ("sample_rate", (24, struct.pack("<I", 44100)), "sample_rate"),
        ("bits_per_sample", (34, struct.pack("<H", 8)), "bits_per_sample"),
    ])
    def test_rejects_wrong_layout_naming_field(self, tmp_path, field, patch, message):
        path = tmp_path / "bad.wav"
        formats.write_wav(path, np.zeros(320))
        blob = bytearray(path.read_bytes())
        offset, raw = patch
        blob[offset:offset + len(raw)] = raw
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match=message):
            formats.read_wav(path)

    def test_rejects_non_riff(self, tmp_path):
        path = tmp_path / "x.wav"
        path.write_bytes(b"garbage header not a wav")
        with pytest.raises(ValueError, match="RIFF"):
            formats.read_wav(path)

    def test_skips_extra_chunks(self, tmp_path):
        path = tmp_path / "extra.wav"
        formats.write_wav(path, np.full(160, 0.25))
        blob = path.read_bytes()
        # splice a LIST chunk between fmt and data
        fmt_end = 12 + 8 + 16
        extra = b"LIST" + struct.pack("<I", 4) + b"info"
        patched = blob[:fmt_end] + extra + blob[fmt_end:]
        patched = patched[:4] + struct.pack("<I", len(patched) - 8) + patched[8:]
        path.write_bytes(patched)
        back = formats.read_wav(path)
        assert np.allclose(back, 0.25, atol=1.0 / 32768.0)
