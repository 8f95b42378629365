import numpy as np
import pytest

from respsound.audio_io import AudioClip, peak_normalize, serialize_wav
from respsound.features import MfccConfig, extract_features


def tone_clip(freq_hz, sr=2000, duration_s=0.25, amplitude=1.0, phase=0.0,
              noise=0.0, rng=None, source_id=""):
    t = np.arange(round(sr * duration_s)) / sr
    x = amplitude * np.sin(2 * np.pi * freq_hz * t + phase)
    if noise:
        x = x + noise * rng.standard_normal(len(t))
    return AudioClip(x, sr, source_id)


def class_freq(label, sr=2000):
    # distinct, comfortably under Nyquist for the default 2 kHz rate
    return 150 + 100 * label


def tone_dataset(n_per_class=2, sr=2000, duration_s=0.25, seed=0,
                 feature="raw", frame_len=50, hop=50, noise=0.0):
    """Synthetic 8-class set: one tone frequency per diagnosis class."""
    rng = np.random.default_rng(seed)
    mfcc_cfg = MfccConfig(n_fft=64, n_mels=20, n_coeffs=13)
    data = []
    for c in range(8):
        for j in range(n_per_class):
            clip = tone_clip(class_freq(c), sr, duration_s,
                             amplitude=rng.uniform(0.5, 1.0),
                             phase=rng.uniform(0, 2 * np.pi),
                             noise=noise, rng=rng, source_id=f"tone{c}-{j}")
            fm = extract_features(peak_normalize(clip), feature,
                                  frame_len, hop, mfcc_cfg)
            data.append((fm, c))
    return data


CLASS_NAMES = ["Healthy", "Asthma", "COPD", "LRTI", "URTI",
               "Bronchiectasis", "Bronchiolitis", "Pneumonia"]


def write_synthetic_corpus(corpus_dir, n_patients_per_class=2,
                           files_per_patient=1, sr=4000, duration_s=1.5,
                           seed=0):
    """Wav corpus in the ingest layout: <patient>_<n>.wav + diagnosis table.

    Each class gets its own tone frequency so the task is learnable.
    Returns the path of the diagnosis table.
    """
    corpus_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    table_lines = []
    pid = 0
    for c, name in enumerate(CLASS_NAMES):
        for _ in range(n_patients_per_class):
            pid += 1
            table_lines.append(f"{pid},{name}")
            for j in range(files_per_patient):
                clip = tone_clip(class_freq(c), sr, duration_s,
                                 amplitude=rng.uniform(0.4, 0.9),
                                 phase=rng.uniform(0, 2 * np.pi),
                                 noise=0.05, rng=rng)
                (corpus_dir / f"{pid}_{j}.wav").write_bytes(serialize_wav(clip))
    table = corpus_dir / "diagnosis.csv"
    table.write_text("".join(line + "\n" for line in table_lines))
    return table


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
