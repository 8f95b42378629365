"""Data augmentation transforms and the convolutive mixture generator.

Every transform maps an AudioClip to one or more AudioClips and preserves
the example's diagnosis label; the dataset boundary reattaches labels.
Time stretching is resampling-based (pitch moves with it); pitch shifting
rescales the time axis with circular wraparound so the clip length and
duration are preserved while every frequency scales by 2^(semitones/12).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio_io import AudioClip, SilentClipError, extract_window, resample_linear
from .dataset import Manifest

__all__ = [
    "TimeStretch",
    "PitchShift",
    "NoiseMix",
    "DynRangeCompress",
    "TimeShift",
    "SubsampleWindows",
    "MixtureSpec",
    "time_stretch",
    "pitch_shift",
    "mix_background",
    "compress_dynamic_range",
    "time_shift",
    "subsample_windows",
    "convolutive_mixture",
    "apply_spec",
    "parse_plan",
    "format_spec",
    "balance_plan",
]


def time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    """Speed the clip up by ``rate`` (output length round(N/rate))."""
    if rate <= 0:
        raise ValueError(f"stretch rate must be positive, got {rate}")
    n_in = len(clip)
    if rate == 1.0:
        return clip
    n_out = round(n_in / rate)
    positions = np.arange(n_out) * rate
    out = np.interp(positions, np.arange(n_in), clip.samples)
    return replace(clip, samples=out)


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Scale all frequencies by 2^(semitones/12), keeping the length.

    Implemented as a circular time-axis rescale: sample j reads position
    j * factor modulo N. Length and duration are preserved exactly; the
    wraparound seam is the price of staying vocoder-free.
    """
    factor = 2.0 ** (semitones / 12.0)
    if factor == 1.0:
        return clip
    n = len(clip)
    positions = np.mod(np.arange(n) * factor, n)
    out = np.interp(positions, np.arange(n), clip.samples, period=n)
    return replace(clip, samples=out)


def mix_background(clip: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """Add noise scaled so signal power over noise power hits snr_db."""
    p_signal = float(np.mean(clip.samples ** 2))
    if p_signal == 0.0:
        raise SilentClipError("cannot set an SNR against a zero-power signal")
    if noise.sample_rate != clip.sample_rate:
        noise = resample_linear(noise, clip.sample_rate)
    bed = noise.samples
    if len(bed) == 0 or not bed.any():
        raise ValueError("noise source has zero power")
    if len(bed) < len(clip):
        bed = np.tile(bed, -(-len(clip) // len(bed)))
    bed = bed[: len(clip)]
    p_noise = float(np.mean(bed ** 2))
    if p_noise == 0.0:
        raise ValueError("noise source has zero power over the mixed span")
    scale = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return replace(clip, samples=clip.samples + scale * bed)


def compress_dynamic_range(clip: AudioClip, threshold_db: float,
                           ratio: float) -> AudioClip:
    """Static sample-wise compressor: dB excess over threshold divided by ratio."""
    if ratio < 1:
        raise ValueError(f"compression ratio must be >= 1, got {ratio}")
    if threshold_db >= 0:
        raise ValueError(f"threshold must be below 0 dBFS, got {threshold_db}")
    amp = np.abs(clip.samples)
    out = clip.samples.copy()
    with np.errstate(divide="ignore"):
        level = 20.0 * np.log10(np.where(amp > 0, amp, 1.0))
    above = (amp > 0) & (level > threshold_db)
    new_level = threshold_db + (level[above] - threshold_db) / ratio
    out[above] *= 10.0 ** ((new_level - level[above]) / 20.0)
    return replace(clip, samples=out)


def time_shift(clip: AudioClip, offset_s: float, circular: bool = False) -> AudioClip:
    """Shift in time by offset_s seconds; length preserved.

    Circular mode rotates; otherwise the vacated region is zero-filled.
    """
    if abs(offset_s) >= clip.duration_s:
        raise ValueError(f"shift of {offset_s}s exceeds clip duration "
                         f"{clip.duration_s:.3f}s")
    k = round(offset_s * clip.sample_rate)
    if k == 0:
        return clip
    if circular:
        out = np.roll(clip.samples, k)
    else:
        out = np.zeros_like(clip.samples)
        if k > 0:
            out[k:] = clip.samples[:-k]
        else:
            out[:k] = clip.samples[-k:]
    return replace(clip, samples=out)


def subsample_windows(clip: AudioClip, offsets_s, duration_s: float,
                      pad: bool = True) -> list[AudioClip]:
    """One fixed-duration window per offset; all inherit the source label."""
    return [extract_window(clip, off, duration_s, pad=pad) for off in offsets_s]


@dataclass(frozen=True)
class MixtureSpec:
    """FIR mixing model: x(n) = sum_k A_k s(n-k) + v(n)."""

    taps: tuple  # K matrices of shape (M observed, S sources)
    noise_std: float = 0.0
    seed: int = 7

    def __post_init__(self):
        taps = tuple(np.asarray(a, dtype=np.float64) for a in self.taps)
        if not taps:
            raise ValueError("need at least one mixing tap")
        if len({a.shape for a in taps}) != 1 or taps[0].ndim != 2:
            raise ValueError("all taps must be 2-D matrices of one shape")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        object.__setattr__(self, "taps", taps)


def convolutive_mixture(sources: list[AudioClip], spec: MixtureSpec) -> list[AudioClip]:
    """Observed channels from FIR-mixed sources plus seeded Gaussian noise.

    Sources are treated as zero before time 0, so tap k contributes a
    k-sample-delayed copy.
    """
    rates = {c.sample_rate for c in sources}
    lengths = {len(c) for c in sources}
    if len(rates) != 1 or len(lengths) != 1:
        raise ValueError("sources must share one length and one sample rate")
    m_obs, s_src = spec.taps[0].shape
    if s_src != len(sources):
        raise ValueError(f"taps expect {s_src} sources, got {len(sources)}")
    (n,) = lengths
    (rate,) = rates
    s = np.stack([c.samples for c in sources])  # (S, N)
    x = np.zeros((m_obs, n))
    for k, a_k in enumerate(spec.taps):
        if k >= n:
            break
        x[:, k:] += a_k @ s[:, : n - k]
    if spec.noise_std > 0:
        rng = np.random.default_rng(spec.seed)
        x += rng.normal(0.0, spec.noise_std, size=x.shape)
    return [AudioClip(x[m], rate, f"mixture[{m}]") for m in range(m_obs)]


# ---------------------------------------------------------------------------
# augmentation plans: one spec per line, "transform=name key=value ..."

@dataclass(frozen=True)
class TimeStretch:
    rate: float


@dataclass(frozen=True)
class PitchShift:
    semitones: float


@dataclass(frozen=True)
class NoiseMix:
    snr_db: float
    noise_source: str  # path of the noise bed


@dataclass(frozen=True)
class DynRangeCompress:
    threshold_db: float
    ratio: float


@dataclass(frozen=True)
class TimeShift:
    offset_s: float
    circular: bool = False


@dataclass(frozen=True)
class SubsampleWindows:
    offsets_s: tuple
    duration_s: float


_SPEC_NAMES = {
    TimeStretch: "time_stretch",
    PitchShift: "pitch_shift",
    NoiseMix: "noise_mix",
    DynRangeCompress: "compress",
    TimeShift: "time_shift",
    SubsampleWindows: "subsample",
}


def apply_spec(spec, clip: AudioClip,
               load_clip=None) -> list[AudioClip]:
    """Run one augmentation spec; returns the resulting clip(s)."""
    if isinstance(spec, TimeStretch):
        return [time_stretch(clip, spec.rate)]
    if isinstance(spec, PitchShift):
        return [pitch_shift(clip, spec.semitones)]
    if isinstance(spec, NoiseMix):
        if load_clip is None:
            raise ValueError("noise_mix needs a clip loader for the noise bed")
        return [mix_background(clip, load_clip(spec.noise_source), spec.snr_db)]
    if isinstance(spec, DynRangeCompress):
        return [compress_dynamic_range(clip, spec.threshold_db, spec.ratio)]
    if isinstance(spec, TimeShift):
        return [time_shift(clip, spec.offset_s, spec.circular)]
    if isinstance(spec, SubsampleWindows):
        return subsample_windows(clip, spec.offsets_s, spec.duration_s)
    raise TypeError(f"unknown augmentation spec {spec!r}")


def format_spec(spec, file_path: str | None = None) -> str:
    parts = [f"transform={_SPEC_NAMES[type(spec)]}"]
    if file_path:
        parts.insert(0, f"file={file_path}")
    if isinstance(spec, TimeStretch):
        parts.append(f"rate={spec.rate}")
    elif isinstance(spec, PitchShift):
        parts.append(f"semitones={spec.semitones}")
    elif isinstance(spec, NoiseMix):
        parts += [f"snr_db={spec.snr_db}", f"noise={spec.noise_source}"]
    elif isinstance(spec, DynRangeCompress):
        parts += [f"threshold_db={spec.threshold_db}", f"ratio={spec.ratio}"]
    elif isinstance(spec, TimeShift):
        parts += [f"offset_s={spec.offset_s}", f"circular={int(spec.circular)}"]
    elif isinstance(spec, SubsampleWindows):
        parts += ["offsets_s=" + ",".join(str(o) for o in spec.offsets_s),
                  f"duration_s={spec.duration_s}"]
    return " ".join(parts)


def parse_plan(text: str) -> list[tuple[str | None, object]]:
    """Parse plan lines into (target file or None, spec) pairs."""
    plan = []
    for line_num, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        kv = dict(tok.split("=", 1) for tok in line.split())
        name = kv.pop("transform", None)
        target = kv.pop("file", None)
        try:
            if name == "time_stretch":
                spec = TimeStretch(float(kv["rate"]))
            elif name == "pitch_shift":
                spec = PitchShift(float(kv["semitones"]))
            elif name == "noise_mix":
                spec = NoiseMix(float(kv["snr_db"]), kv["noise"])
            elif name == "compress":
                spec = DynRangeCompress(float(kv["threshold_db"]), float(kv["ratio"]))
            elif name == "time_shift":
                spec = TimeShift(float(kv["offset_s"]),
                                 bool(int(kv.get("circular", "0"))))
            elif name == "subsample":
                offsets = tuple(float(o) for o in kv["offsets_s"].split(","))
                spec = SubsampleWindows(offsets, float(kv["duration_s"]))
            else:
                raise KeyError(f"unknown transform {name!r}")
        except (KeyError, ValueError) as exc:
            raise ValueError(f"plan line {line_num}: {exc}") from exc
        plan.append((target, spec))
    return plan


def balance_plan(manifest: Manifest, duration_s: float = 1.0,
                 shift_step_s: float = 0.1) -> list[tuple[str, object]]:
    """Oversample minority classes up to the modal class count.

    Cycles each minority class's files, assigning progressively larger
    time shifts; no claim is made that this matches any published split.
    """
    by_class: dict = {}
    for e in manifest.entries:
        by_class.setdefault(e.diagnosis, []).append(e.file_path)
    target = max(len(v) for v in by_class.values())
    plan: list[tuple[str, object]] = []
    for dx, files in sorted(by_class.items()):
        deficit = target - len(files)
        for j in range(deficit):
            offset = shift_step_s * (j // len(files) + 1)
            if offset >= duration_s:
                offset = offset % duration_s or shift_step_s
            plan.append((files[j % len(files)], TimeShift(offset, circular=True)))
    return plan
