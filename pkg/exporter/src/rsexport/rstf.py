"""Independent reader/writer for the RSTF tensor format.

Layout (all integers little-endian): magic "RSTF", version byte 0x01,
dtype byte 0x01 (f32-LE), ndim u8 (1-8), ndim u32 extents, then row-major
f32 data. Deliberately shares no code with the analysis toolkit: this file
is one half of the cross-validation boundary.
"""

from __future__ import annotations

import struct

import numpy as np

from . import ExportError

_MAGIC = b"RSTF"


def write(t: np.ndarray, path) -> None:
    a = np.asarray(t, dtype="<f4")
    if not (1 <= a.ndim <= 8) or min(a.shape) < 1:
        raise ExportError(f"unrepresentable tensor shape {a.shape}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BBB", 1, 1, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC or len(raw) < 7:
        raise ExportError(f"{path}: not an RSTF file")
    version, dtype, ndim = raw[4], raw[5], raw[6]
    if version != 1 or dtype != 1 or not (1 <= ndim <= 8):
        raise ExportError(f"{path}: unsupported header {version}/{dtype}/{ndim}")
    shape = struct.unpack(f"<{ndim}I", raw[7 : 7 + 4 * ndim])
    count = int(np.prod(shape))
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=7 + 4 * ndim)
    return data.reshape(shape).copy()
