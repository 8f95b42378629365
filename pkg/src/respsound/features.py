"""Feature extraction: framing, spectra, MFCC, zero-crossing rate, raw frames.

A clip window is turned into the time-major frame matrix the recurrent
network consumes, one feature vector per analysis frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip

__all__ = [
    "FeatureMatrix",
    "MfccConfig",
    "FeatureConfigError",
    "FramingError",
    "frame_signal",
    "hann_window",
    "fft_radix2",
    "dft_power_spectrum",
    "mel_scale",
    "mel_filterbank",
    "dct_matrix",
    "mfcc",
    "zero_crossing_rate",
    "raw_frames",
    "extract_features",
    "save_features",
    "load_features",
]

FEATURE_KINDS = ("mfcc", "zcr", "raw")


class FeatureConfigError(ValueError):
    """Invalid analysis configuration (FFT size, band edges, ...)."""


class FramingError(ValueError):
    """Signal too short for the requested framing."""


@dataclass(frozen=True)
class FeatureMatrix:
    """T x D frame matrix plus the framing parameters that produced it."""

    frames: np.ndarray
    frame_len: int
    hop: int
    kind: str

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("feature matrix contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def n_steps(self) -> int:
        return self.frames.shape[0]

    @property
    def n_dims(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class MfccConfig:
    n_fft: int = 256
    n_mels: int = 26
    n_coeffs: int = 13
    fmin: float = 0.0
    fmax: float | None = None  # None means Nyquist at extraction time
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise FeatureConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.n_coeffs > self.n_mels:
            raise FeatureConfigError(
                f"n_coeffs ({self.n_coeffs}) exceeds n_mels ({self.n_mels})")
        if self.fmin < 0:
            raise FeatureConfigError(f"fmin must be nonnegative, got {self.fmin}")
        if self.log_floor <= 0:
            raise FeatureConfigError("log_floor must be positive")

    def band(self, sample_rate: int) -> tuple[float, float]:
        fmax = sample_rate / 2 if self.fmax is None else self.fmax
        if not self.fmin < fmax <= sample_rate / 2:
            raise FeatureConfigError(
                f"need 0 <= fmin < fmax <= rate/2, got [{self.fmin}, {fmax}] "
                f"at {sample_rate} Hz")
        return self.fmin, fmax


def frame_signal(samples: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Slice a signal into overlapping frames; frame t starts at t*hop."""
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    if frame_len > n:
        raise FramingError(f"signal of {n} samples shorter than frame_len {frame_len}")
    if hop < 1:
        raise FramingError(f"hop must be >= 1, got {hop}")
    n_frames = 1 + (n - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def hann_window(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _bit_reverse_indices(n: int) -> np.ndarray:
    rev = np.zeros(n, dtype=np.intp)
    for i in range(1, n):
        rev[i] = (rev[i >> 1] >> 1) | ((i & 1) * (n >> 1))
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT. Length must be 2^k."""
    a = np.asarray(x, dtype=np.complex128)
    n = len(a)
    if n == 0 or n & (n - 1):
        raise FeatureConfigError(f"FFT length must be a power of two, got {n}")
    if n == 1:
        return a.copy()
    a = a[_bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        w = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(-1, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * w
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        size *= 2
    return a


def dft_power_spectrum(frame: np.ndarray, n_fft: int) -> np.ndarray:
    """|X_k|^2 for k = 0 .. n_fft/2, frame zero-padded up to n_fft.

    Windowing is the caller's job (mfcc applies Hann before this stage).
    """
    frame = np.asarray(frame, dtype=np.float64)
    if len(frame) > n_fft:
        raise FeatureConfigError(
            f"frame of {len(frame)} samples exceeds n_fft {n_fft}")
    padded = np.zeros(n_fft)
    padded[: len(frame)] = frame
    spectrum = fft_radix2(padded)[: n_fft // 2 + 1]
    return np.abs(spectrum) ** 2


def mel_scale(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mels):
    return 700.0 * (10.0 ** (np.asarray(mels, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters with centers uniformly spaced on the mel scale.

    Returns an (n_mels, n_fft/2 + 1) matrix; triangles are evaluated at the
    continuous bin frequencies k * rate / n_fft.
    """
    fmin, fmax = cfg.band(sample_rate)
    mel_points = np.linspace(mel_scale(fmin), mel_scale(fmax), cfg.n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.arange(cfg.n_fft // 2 + 1) * sample_rate / cfg.n_fft

    bank = np.zeros((cfg.n_mels, len(bin_freqs)))
    for j in range(cfg.n_mels):
        left, center, right = hz_points[j], hz_points[j + 1], hz_points[j + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        bank[j] = np.maximum(0.0, np.minimum(rising, falling))
        if not bank[j].any():
            raise FeatureConfigError(
                f"mel filter {j} is degenerate at n_fft={cfg.n_fft}, "
                f"rate={sample_rate}; increase n_fft or widen the band")
    return bank


def dct_matrix(n_coeffs: int, n_inputs: int) -> np.ndarray:
    """Orthonormal type-II DCT matrix, first n_coeffs rows."""
    k = np.arange(n_coeffs)[:, None]
    i = np.arange(n_inputs)[None, :]
    mat = np.sqrt(2.0 / n_inputs) * np.cos(np.pi * (i + 0.5) * k / n_inputs)
    mat[0] /= np.sqrt(2.0)
    return mat


def mfcc(clip: AudioClip, cfg: MfccConfig, frame_len: int, hop: int) -> FeatureMatrix:
    """Hann window -> power spectrum -> mel energies -> log -> DCT."""
    frames = frame_signal(clip.samples, frame_len, hop) * hann_window(frame_len)
    bank = mel_filterbank(cfg, clip.sample_rate)
    dct = dct_matrix(cfg.n_coeffs, cfg.n_mels)
    spectra = np.stack([dft_power_spectrum(f, cfg.n_fft) for f in frames])
    energies = spectra @ bank.T
    log_energies = np.log(np.maximum(energies, cfg.log_floor))
    coeffs = log_energies @ dct.T
    return FeatureMatrix(coeffs, frame_len, hop, "mfcc")


def zero_crossing_rate(clip: AudioClip, frame_len: int, hop: int) -> FeatureMatrix:
    """Per frame, the fraction of adjacent pairs whose signs differ.

    sign(0) counts as nonnegative, so a silent frame scores 0.
    """
    if frame_len < 2:
        raise FramingError(f"zcr needs frame_len >= 2, got {frame_len}")
    frames = frame_signal(clip.samples, frame_len, hop)
    nonneg = frames >= 0
    rate = np.mean(nonneg[:, 1:] != nonneg[:, :-1], axis=1)
    return FeatureMatrix(rate[:, None], frame_len, hop, "zcr")


def raw_frames(clip: AudioClip, frame_len: int, hop: int) -> FeatureMatrix:
    return FeatureMatrix(frame_signal(clip.samples, frame_len, hop),
                         frame_len, hop, "raw")


def extract_features(clip: AudioClip, kind: str, frame_len: int, hop: int,
                     mfcc_cfg: MfccConfig | None = None) -> FeatureMatrix:
    """Dispatch on feature kind; the network's x_t sequence comes from here."""
    if kind == "mfcc":
        return mfcc(clip, mfcc_cfg or MfccConfig(), frame_len, hop)
    if kind == "zcr":
        return zero_crossing_rate(clip, frame_len, hop)
    if kind == "raw":
        return raw_frames(clip, frame_len, hop)
    raise FeatureConfigError(f"unknown feature kind {kind!r}")


_FEATURE_MAGIC = b"respsound-features v1\n"


def save_features(fm: FeatureMatrix, path) -> None:
    """Cache format: text header, then row-major float64 little-endian."""
    header = (_FEATURE_MAGIC
              + f"kind={fm.kind}\n".encode()
              + f"frame_len={fm.frame_len}\n".encode()
              + f"hop={fm.hop}\n".encode()
              + f"shape={fm.n_steps}x{fm.n_dims}\n".encode()
              + b"end-header\n")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(fm.frames.astype("<f8").tobytes())


def load_features(path) -> FeatureMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(_FEATURE_MAGIC):
        raise ValueError(f"{path}: not a respsound feature cache")
    head, _, blob = data.partition(b"end-header\n")
    fields = dict(line.split("=", 1)
                  for line in head.decode().splitlines()[1:] if "=" in line)
    t, d = (int(v) for v in fields["shape"].split("x"))
    frames = np.frombuffer(blob[: t * d * 8], dtype="<f8").reshape(t, d)
    return FeatureMatrix(frames, int(fields["frame_len"]), int(fields["hop"]),
                         fields["kind"])
