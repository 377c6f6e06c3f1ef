"""Binary sample container.

Layout (little-endian)::

    offset 0   4 bytes   magic  b"BWMT"
    offset 4   uint32    n      (degrees of freedom)
    offset 8   uint32    T      (samples per channel)
    offset 12  uint32    C      (channel count)
    offset 16  float32[C * T]   channel-major data

See ``docs/format.md`` for the channel order used by each dataset domain.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"BWMT"
_HEADER = struct.Struct("<4sIII")


def write_channels(path: str | Path, channels: np.ndarray, n: int) -> None:
    channels = np.asarray(channels)
    if channels.ndim != 2:
        raise DataError("channels must be a 2-D (C, T) array")
    c, t = channels.shape
    payload = _HEADER.pack(MAGIC, n, t, c) + channels.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(payload)


def read_channels(path: str | Path) -> tuple[np.ndarray, int]:
    """Return ``(channels (C, T) float64, n)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n, t, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * c * t
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(c, t)
    return data.astype(np.float64), n
