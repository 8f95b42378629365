"""Corpus management: manifest, diagnosis labels, splits, example building.

The canonical ingestion format is a UTF-8 CSV manifest with header
``file_path,patient_id,diagnosis`` (extra columns are kept as metadata).
An adapter builds it from an ICBHI-style layout: audio files whose names
start with the patient number, plus a two-column patient->diagnosis table.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .audio_io import (AudioClip, SilentClipError, extract_window, parse_wav,
                       peak_normalize, resample_linear)
from .features import FeatureMatrix, MfccConfig, extract_features

__all__ = [
    "Diagnosis",
    "ManifestEntry",
    "Manifest",
    "ManifestError",
    "SplitAssignment",
    "ExampleConfig",
    "load_manifest",
    "load_manifest_file",
    "save_manifest",
    "class_distribution",
    "split",
    "build_examples",
    "ingest_corpus",
]

log = logging.getLogger(__name__)


class Diagnosis(IntEnum):
    """The eight diagnosis classes, with stable codes 0-7."""

    HEALTHY = 0
    ASTHMA = 1
    COPD = 2
    LRTI = 3
    URTI = 4
    BRONCHIECTASIS = 5
    BRONCHIOLITIS = 6
    PNEUMONIA = 7

    @classmethod
    def parse(cls, name: str) -> "Diagnosis":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ManifestError(f"unknown diagnosis {name!r}; expected one of "
                                f"{[d.name.title() for d in cls]}") from None


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    file_path: str
    patient_id: int
    diagnosis: Diagnosis
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.file_path:
            raise ManifestError("file_path must be non-empty")
        if self.patient_id < 1:
            raise ManifestError(f"patient_id must be >= 1, got {self.patient_id}")


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen_paths: set[str] = set()
        patient_dx: dict[int, Diagnosis] = {}
        for e in self.entries:
            if e.file_path in seen_paths:
                raise ManifestError(f"duplicate file_path {e.file_path!r}")
            seen_paths.add(e.file_path)
            prior = patient_dx.setdefault(e.patient_id, e.diagnosis)
            if prior != e.diagnosis:
                raise ManifestError(
                    f"patient {e.patient_id} listed as both {prior.name} "
                    f"and {e.diagnosis.name}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def patient_ids(self) -> list[int]:
        return sorted({e.patient_id for e in self.entries})


REQUIRED_COLUMNS = ("file_path", "patient_id", "diagnosis")


def load_manifest(text: str) -> Manifest:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ManifestError(f"manifest header missing columns {missing}")
    extra_cols = [c for c in header if c not in REQUIRED_COLUMNS]
    entries = []
    for row_num, row in enumerate(reader, start=2):
        try:
            dx = Diagnosis.parse(row["diagnosis"])
            pid = int(row["patient_id"])
            entry = ManifestEntry(row["file_path"], pid, dx,
                                  {c: row[c] for c in extra_cols
                                   if row.get(c) not in (None, "")})
        except (ManifestError, ValueError, TypeError) as exc:
            raise ManifestError(f"manifest row {row_num}: {exc}") from exc
        entries.append(entry)
    return Manifest(tuple(entries))


def load_manifest_file(path) -> Manifest:
    return load_manifest(Path(path).read_text(encoding="utf-8"))


def save_manifest(manifest: Manifest, path) -> None:
    extra_cols = sorted({k for e in manifest.entries for k in e.metadata})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(REQUIRED_COLUMNS) + extra_cols)
        for e in manifest.entries:
            writer.writerow([e.file_path, e.patient_id, e.diagnosis.name.title()]
                            + [e.metadata.get(c, "") for c in extra_cols])


def class_distribution(manifest: Manifest) -> tuple[np.ndarray, np.ndarray]:
    """Per-class (counts, fractions) over all entries."""
    if not manifest.entries:
        raise ManifestError("empty manifest has no class distribution")
    counts = np.zeros(len(Diagnosis), dtype=np.int64)
    for e in manifest.entries:
        counts[e.diagnosis] += 1
    return counts, counts / counts.sum()


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def __post_init__(self):
        groups = (set(self.train), set(self.validation), set(self.test))
        total = len(self.train) + len(self.validation) + len(self.test)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise ValueError("split subsets overlap")


def _partition_sizes(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    # cumulative floors: every subset lands within one entry of its fraction,
    # which a plain floor/floor/remainder scheme does not guarantee for test
    n_train = int(n * fractions[0])
    n_val = int(n * (fractions[0] + fractions[1])) - n_train
    return n_train, n_val, n - n_train - n_val


def split(manifest: Manifest,
          fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
          seed: int = 7, grouping: str = "by_sample") -> SplitAssignment:
    """Seeded shuffle then train/validation/test partition.

    by_patient keeps every entry of one patient in a single subset; the
    fractions then apply to patients rather than entries.
    """
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be positive and sum to 1, got {fractions}")
    if len(manifest) < 3:
        raise ValueError(f"cannot split {len(manifest)} entries into 3 subsets")
    rng = np.random.default_rng(seed)
    if grouping == "by_sample":
        order = rng.permutation(len(manifest))
        n_train, n_val, _ = _partition_sizes(len(manifest), fractions)
        train = order[:n_train]
        val = order[n_train:n_train + n_val]
        test = order[n_train + n_val:]
    elif grouping == "by_patient":
        patients = np.array(manifest.patient_ids)
        order = rng.permutation(len(patients))
        n_train, n_val, _ = _partition_sizes(len(patients), fractions)
        subsets = {
            pid: ("train" if k < n_train else
                  "val" if k < n_train + n_val else "test")
            for k, pid in enumerate(patients[order])
        }
        buckets: dict[str, list[int]] = {"train": [], "val": [], "test": []}
        for idx, e in enumerate(manifest.entries):
            buckets[subsets[e.patient_id]].append(idx)
        train, val, test = buckets["train"], buckets["val"], buckets["test"]
    else:
        raise ValueError(f"unknown grouping {grouping!r}")
    return SplitAssignment(tuple(int(i) for i in train),
                           tuple(int(i) for i in val),
                           tuple(int(i) for i in test), seed)


@dataclass(frozen=True)
class ExampleConfig:
    """How raw corpus files become (FeatureMatrix, Diagnosis) examples."""

    duration_s: float = 1.0
    offset_mode: str = "start"  # "start" | "random"
    pad_short: bool = True
    target_rate: int = 4000  # canonical rate; corpus files are heterogeneous
    feature: str = "raw"
    frame_len: int = 100  # 25 ms at 4 kHz
    hop: int = 40  # 10 ms at 4 kHz
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    seed: int = 7
    on_error: str = "fail"  # "fail" | "skip"

    def feature_dim(self) -> int:
        return {"mfcc": self.mfcc.n_coeffs, "zcr": 1, "raw": self.frame_len}[self.feature]


def clip_to_features(clip: AudioClip, cfg: ExampleConfig,
                     offset_s: float = 0.0) -> FeatureMatrix:
    """parse -> mono happened upstream; normalize, window, extract."""
    clip = peak_normalize(clip)
    if clip.sample_rate != cfg.target_rate:
        clip = resample_linear(clip, cfg.target_rate)
    clip = extract_window(clip, offset_s, cfg.duration_s, pad=cfg.pad_short)
    return extract_features(clip, cfg.feature, cfg.frame_len, cfg.hop, cfg.mfcc)


def build_examples(manifest: Manifest, indices, cfg: ExampleConfig,
                   root: str | os.PathLike = ".",
                   ) -> list[tuple[FeatureMatrix, Diagnosis]]:
    """Deterministically turn manifest entries into labeled feature matrices."""
    rng = np.random.default_rng(cfg.seed)
    examples: list[tuple[FeatureMatrix, Diagnosis]] = []
    root = Path(root)
    for idx in indices:
        entry = manifest.entries[idx]
        path = root / entry.file_path
        try:
            clip = parse_wav(path.read_bytes(), source_id=entry.file_path)
            offset = 0.0
            if cfg.offset_mode == "random":
                slack = max(0.0, clip.duration_s - cfg.duration_s)
                offset = float(rng.uniform(0.0, slack)) if slack > 0 else 0.0
            fm = clip_to_features(clip, cfg, offset)
        except SilentClipError:
            log.warning("skipping silent clip %s", entry.file_path)
            continue
        except (OSError, ValueError) as exc:
            if cfg.on_error == "skip":
                log.warning("skipping unreadable %s: %s", entry.file_path, exc)
                continue
            raise
        examples.append((fm, entry.diagnosis))
    return examples


def ingest_corpus(corpus_dir, diagnosis_table: dict[int, Diagnosis],
                  extensions: tuple[str, ...] = (".wav",),
                  ) -> tuple[Manifest, list[str]]:
    """Build a manifest from files named ``<patient_id>_*.wav``.

    Returns the manifest plus the names of non-audio files that were skipped.
    A parseable patient id missing from the diagnosis table is a hard error.
    """
    corpus_dir = Path(corpus_dir)
    entries: list[ManifestEntry] = []
    skipped: list[str] = []
    for path in sorted(corpus_dir.iterdir()):
        if not path.is_file() or path.suffix.lower() not in extensions:
            skipped.append(path.name)
            continue
        digits = ""
        for ch in path.stem:
            if ch.isdigit():
                digits += ch
            else:
                break
        if not digits:
            raise ManifestError(f"cannot parse a patient id from {path.name!r}")
        pid = int(digits)
        if pid not in diagnosis_table:
            raise ManifestError(f"patient {pid} ({path.name}) missing from the "
                                f"diagnosis table")
        entries.append(ManifestEntry(path.name, pid, diagnosis_table[pid]))
    return Manifest(tuple(entries)), skipped


def load_diagnosis_table(path) -> dict[int, Diagnosis]:
    """Two-column ``patient_id,diagnosis`` text (the ICBHI layout)."""
    table: dict[int, Diagnosis] = {}
    for line_num, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p for p in line.replace(",", "\t").split("\t") if p]
        if len(parts) < 2:
            raise ManifestError(f"diagnosis table line {line_num}: "
                                f"expected 'patient_id,diagnosis'")
        table[int(parts[0])] = Diagnosis.parse(parts[1])
    return table
