"""Reading, normalizing and windowing of audio recordings.

Audio is parsed from RIFF/WAVE containers into mono float64 sequences in
[-1, 1]. Everything downstream (features, the network) consumes the
:class:`AudioClip` produced here.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "AudioClip",
    "WavFormatError",
    "SilentClipError",
    "WindowRangeError",
    "parse_wav",
    "serialize_wav",
    "peak_normalize",
    "extract_window",
    "resample_linear",
]


class WavFormatError(ValueError):
    """Malformed or unsupported WAVE container. Carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SilentClipError(ValueError):
    """Clip is all zeros; it cannot be peak-normalized."""


class WindowRangeError(ValueError):
    """Requested window extends past the end of the clip."""


@dataclass(frozen=True)
class AudioClip:
    """Mono audio: float64 samples (nominally in [-1, 1]) at a fixed rate."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.asarray(self.samples, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


# wFormatTag values we accept
_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


def parse_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Parse a RIFF/WAVE byte string into a mono AudioClip.

    Integer PCM (8/16/24/32-bit) and 32-bit float encodings are accepted;
    integer samples are scaled by their type's max magnitude, multi-channel
    frames are averaged to mono. Unknown chunks are skipped by declared size.
    """
    if len(data) < 12:
        raise WavFormatError("file too small for a RIFF header", 0)
    if data[0:4] != b"RIFF":
        raise WavFormatError("missing RIFF magic", 0)
    if data[8:12] != b"WAVE":
        raise WavFormatError("missing WAVE form type", 8)

    fmt = None
    raw = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body + 16 > len(data):
                raise WavFormatError("fmt chunk truncated", pos)
            fmt = struct.unpack_from("<HHIIHH", data, body)
        elif chunk_id == b"data":
            if body + chunk_size > len(data):
                raise WavFormatError(
                    f"data chunk declares {chunk_size} bytes but only "
                    f"{len(data) - body} remain", pos)
            raw = data[body:body + chunk_size]
        # skip by declared size, honoring the RIFF word-alignment pad byte
        pos = body + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise WavFormatError("no fmt chunk found", len(data))
    if raw is None:
        raise WavFormatError("no data chunk found", len(data))

    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if sample_rate == 0:
        raise WavFormatError("declared sample rate is zero", 12)
    if channels == 0:
        raise WavFormatError("declared channel count is zero", 12)

    if audio_format == _FMT_PCM:
        if bits == 8:
            x = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        elif bits == 24:
            n = len(raw) // 3
            b = np.frombuffer(raw[: n * 3], dtype=np.uint8).reshape(n, 3)
            vals = (b[:, 0].astype(np.int32)
                    | (b[:, 1].astype(np.int32) << 8)
                    | (b[:, 2].astype(np.int32) << 16))
            vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
            x = vals.astype(np.float64) / float(1 << 23)
        elif bits == 32:
            x = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
        else:
            raise WavFormatError(f"unsupported PCM bit depth {bits}", 12)
    elif audio_format == _FMT_IEEE_FLOAT:
        if bits == 32:
            x = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        elif bits == 64:
            x = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        else:
            raise WavFormatError(f"unsupported float bit depth {bits}", 12)
    else:
        raise WavFormatError(f"unsupported encoding tag {audio_format}", 12)

    if channels > 1:
        n = len(x) // channels
        x = x[: n * channels].reshape(n, channels).mean(axis=1)
    if len(x) == 0:
        raise WavFormatError("data chunk holds no samples", len(data))

    return AudioClip(x, int(sample_rate), source_id)


def serialize_wav(clip: AudioClip, bits: int = 16) -> bytes:
    """Serialize a clip as mono integer PCM (16-bit default) or 32-bit float."""
    if bits == 16:
        q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
        raw = q.tobytes()
        fmt_tag, bytes_per = _FMT_PCM, 2
    elif bits == 32:
        raw = clip.samples.astype("<f4").tobytes()
        fmt_tag, bytes_per = _FMT_IEEE_FLOAT, 4
    else:
        raise ValueError(f"unsupported serialization depth {bits}")
    fmt = struct.pack("<HHIIHH", fmt_tag, 1, clip.sample_rate,
                      clip.sample_rate * bytes_per, bytes_per, bits * 1)
    chunks = (b"WAVE"
              + b"fmt " + struct.pack("<I", len(fmt)) + fmt
              + b"data" + struct.pack("<I", len(raw)) + raw)
    if len(raw) & 1:
        chunks += b"\x00"
    return b"RIFF" + struct.pack("<I", len(chunks)) + chunks


def peak_normalize(clip: AudioClip) -> AudioClip:
    """Scale so the max absolute amplitude is exactly 1."""
    peak = float(np.max(np.abs(clip.samples))) if len(clip) else 0.0
    if peak == 0.0:
        raise SilentClipError(f"clip {clip.source_id!r} is all zeros")
    return replace(clip, samples=clip.samples / peak)


def extract_window(clip: AudioClip, offset_s: float, duration_s: float,
                   pad: bool = True) -> AudioClip:
    """Cut round(duration*rate) samples starting at round(offset*rate).

    Windows running past the end are zero-padded at the tail when ``pad``
    is set, otherwise rejected.
    """
    if offset_s < 0:
        raise WindowRangeError(f"offset must be nonnegative, got {offset_s}")
    if duration_s <= 0:
        raise WindowRangeError(f"duration must be positive, got {duration_s}")
    start = round(offset_s * clip.sample_rate)
    n = round(duration_s * clip.sample_rate)
    end = start + n
    if end > len(clip):
        if not pad:
            raise WindowRangeError(
                f"window [{start}, {end}) exceeds clip length {len(clip)}")
        out = np.zeros(n)
        avail = max(0, len(clip) - start)
        out[:avail] = clip.samples[start:start + avail]
    else:
        out = clip.samples[start:end]
    return replace(clip, samples=out)


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling; endpoint values are held."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n_in = len(clip)
    n_out = round(n_in * target_rate / clip.sample_rate)
    positions = np.arange(n_out) * (clip.sample_rate / target_rate)
    out = np.interp(positions, np.arange(n_in), clip.samples)
    return AudioClip(out, int(target_rate), clip.source_id)
