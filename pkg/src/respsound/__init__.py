"""Respiratory sound classification toolkit.

Audio ingestion, MFCC/ZCR/raw feature extraction, an LSTM/BLSTM classifier
with hand-derived gradients, dataset management for the eight-diagnosis
corpus, augmentation transforms, and a training/evaluation harness.
"""

__version__ = "0.1.0"

from .audio_io import AudioClip, parse_wav, peak_normalize  # noqa: F401
from .features import FeatureMatrix, MfccConfig, extract_features  # noqa: F401
