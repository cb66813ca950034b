import struct
import wave

import numpy as np
import pytest

from affectkit.wavio import WavError, parse_wav, read_wav


def write_pcm(path, samples, rate=44100):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(np.asarray(samples, dtype="<i2").tobytes())


def test_reads_stdlib_file(tmp_path):
    raw = np.array([0, 1, -1, 32767, -32768, 1000], dtype=np.int16)
    write_pcm(tmp_path / "a.wav", raw)
    rate, x = parse_wav((tmp_path / "a.wav").read_bytes())
    assert rate == 44100
    np.testing.assert_array_equal(x, raw / 32768.0)


def test_skips_unknown_chunks_with_padding():
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt
    body += b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    body += b"data" + struct.pack("<I", 4) + struct.pack("<hh", 5, -5)
    rate, x = parse_wav(b"RIFF" + struct.pack("<I", len(body)) + body)
    assert rate == 8000 and x.tolist() == [5 / 32768, -5 / 32768]


def _header(channels=1, bits=16, fmt_code=1):
    fmt = struct.pack("<HHIIHH", fmt_code, channels, 44100, 88200, 2, bits)
    return b"RIFF\x00\x00\x00\x00WAVEfmt " + struct.pack("<I", 16) + fmt


@pytest.mark.parametrize(
    "data, match",
    [
        (b"RIFX" + b"\x00" * 8, "offset 0"),
        (b"RIFF\x00\x00\x00\x00WAVX", "offset 8"),
        (_header(channels=2) + b"data\x00\x00\x00\x00", "num_channels"),
        (_header(bits=8) + b"data\x00\x00\x00\x00", "bits_per_sample"),
        (_header(fmt_code=3) + b"data\x00\x00\x00\x00", "audio_format"),
        (_header() + b"data" + struct.pack("<I", 100) + b"\x00\x00", "declares 100 bytes"),
        (_header(), "no data chunk"),
        (b"RIFF", "12 bytes"),
    ],
)
def test_malformed_files(data, match):
    with pytest.raises(WavError, match=match):
        parse_wav(data)


def test_rate_mismatch_names_field(tmp_path):
    write_pcm(tmp_path / "b.wav", np.zeros(10), rate=16000)
    with pytest.raises(WavError, match="sample_rate.*16000.*44100"):
        read_wav(tmp_path / "b.wav", expected_rate=44100)
    assert read_wav(tmp_path / "b.wav", expected_rate=16000).shape == (10,)
