"""Minimal RIFF/WAVE reader for 16-bit PCM mono audio."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class WavError(ValueError):
    pass


def parse_wav(data: bytes) -> tuple[int, np.ndarray]:
    """Return ``(sample_rate, samples)`` with samples scaled to [-1, 1) as v / 32768."""
    if len(data) < 12:
        raise WavError(f"offset 0: RIFF header needs 12 bytes, got {len(data)}")
    if data[0:4] != b"RIFF":
        raise WavError(f"offset 0: chunk id is {data[0:4]!r}, expected b'RIFF'")
    if data[8:12] != b"WAVE":
        raise WavError(f"offset 8: form type is {data[8:12]!r}, expected b'WAVE'")

    fmt = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if body + size > len(data):
            raise WavError(f"offset {pos + 4}: chunk {cid!r} declares {size} bytes, only {len(data) - body} remain")
        if cid == b"fmt ":
            if size < 16:
                raise WavError(f"offset {pos + 4}: fmt chunk size {size} < 16")
            fmt = struct.unpack_from("<HHIIHH", data, body)
            _check_fmt(fmt, body)
        elif cid == b"data":
            if fmt is None:
                raise WavError(f"offset {pos}: data chunk before fmt chunk")
            if size % 2:
                raise WavError(f"offset {pos + 4}: data size {size} is not a whole number of 16-bit samples")
            samples = np.frombuffer(data, dtype="<i2", count=size // 2, offset=body)
            return fmt[2], samples.astype(np.float64) / 32768.0
        pos = body + size + (size & 1)
    raise WavError(f"offset {pos}: no data chunk found")


def _check_fmt(fmt, body: int) -> None:
    audio_format, channels, _, _, _, bits = fmt
    if audio_format != 1:
        raise WavError(f"offset {body}: audio_format is {audio_format}, only PCM (1) is supported")
    if channels != 1:
        raise WavError(f"offset {body + 2}: num_channels is {channels}, expected mono")
    if bits != 16:
        raise WavError(f"offset {body + 14}: bits_per_sample is {bits}, expected 16")


def read_wav(path: str | Path, expected_rate: int | None = None) -> np.ndarray:
    rate, samples = parse_wav(Path(path).read_bytes())
    if expected_rate is not None and rate != expected_rate:
        raise WavError(f"field sample_rate: file is {rate} Hz, configured rate is {expected_rate} Hz")
    return samples
