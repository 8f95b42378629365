"""Backend selection for the LSTM sequence kernels.

The compiled Cython kernel is used when available; the numpy kernel is the
fallback and the reference. Set RESPSOUND_PURE_PYTHON=1 to force the
fallback (used by the benchmark and the backend-equivalence tests).
"""
from __future__ import annotations

import os

from . import _lstm_py

if os.environ.get("RESPSOUND_PURE_PYTHON"):
    _impl = _lstm_py
else:
    try:
        from . import _lstm_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _lstm_py

BACKEND: str = _impl.BACKEND
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
