"""RSTF tensor files and dataset manifests.

RSTF ("RSTF" magic) version 1, all integers little-endian:

    bytes 0-3   magic 0x52 0x53 0x54 0x46
    byte  4     version, 0x01
    byte  5     dtype code, 0x01 = f32 little-endian (the only code in v1)
    byte  6     ndim as u8, 1-8
    next        ndim x u32 extents
    rest        product(extents) x 4 bytes of f32 data, row-major

Tensors are plain numpy float32 arrays. Read/write is bit-exact and makes
no judgement about NaN/Inf payloads; analysis stages reject non-finite
values themselves.

A manifest is UTF-8 text, one record per line, tab-separated fields
image_id, class_id, class_name, tensor_path, split (train/val/test).
Lines starting with '#' are ignored.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptFile,
    DuplicateId,
    FormatError,
    IoError,
    MissingTensor,
    NonContiguousClasses,
    UnsupportedDtype,
)

MAGIC = b"RSTF"
VERSION = 1
DTYPE_F32 = 1
MAX_NDIM = 8

SPLITS = ("train", "val", "test")


def write_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    """Write a tensor as RSTF v1. Bytes are deterministic for equal input."""
    a = np.asarray(t, dtype=np.float32)
    if a.ndim < 1 or a.ndim > MAX_NDIM:
        raise FormatError(f"tensor rank must be 1-{MAX_NDIM}, got {a.ndim}")
    if any(e < 1 for e in a.shape):
        raise FormatError(f"every extent must be >= 1, got shape {a.shape}")
    a = np.ascontiguousarray(a)
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F32, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(a.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read an RSTF v1 file, validating the header before touching data."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an RSTF file")
    if len(raw) < 7:
        raise CorruptFile(f"{path}: truncated header")
    version, dtype, ndim = raw[4], raw[5], raw[6]
    if version != VERSION:
        raise FormatError(f"{path}: unsupported RSTF version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtype(f"{path}: unsupported dtype code {dtype}")
    if ndim < 1 or ndim > MAX_NDIM:
        raise CorruptFile(f"{path}: ndim {ndim} outside 1-{MAX_NDIM}")

    dims_end = 7 + 4 * ndim
    if len(raw) < dims_end:
        raise CorruptFile(f"{path}: truncated extents")
    dims = struct.unpack(f"<{ndim}I", raw[7:dims_end])
    if any(e < 1 for e in dims):
        raise CorruptFile(f"{path}: zero extent in {dims}")

    count = 1
    for e in dims:
        count *= e
    # Declared size must match the remaining bytes exactly; checked before
    # any array is built from the payload.
    if len(raw) - dims_end != 4 * count:
        raise CorruptFile(
            f"{path}: {len(raw) - dims_end} payload bytes, expected {4 * count}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=dims_end)
    return data.reshape(dims).copy()


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    class_id: int
    class_name: str
    tensor_path: str
    split: str


@dataclass
class DatasetManifest:
    """Ordered image records with contiguous class ids 0..K-1."""

    records: list[ManifestRecord] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return 1 + max(r.class_id for r in self.records) if self.records else 0

    def class_of(self, image_id: str) -> int:
        return self._by_id()[image_id].class_id

    def record(self, image_id: str) -> ManifestRecord:
        return self._by_id()[image_id]

    def class_names(self) -> dict[int, str]:
        return {r.class_id: r.class_name for r in self.records}

    def _by_id(self) -> dict[str, ManifestRecord]:
        cached = getattr(self, "_index", None)
        if cached is None or len(cached) != len(self.records):
            cached = {r.image_id: r for r in self.records}
            object.__setattr__(self, "_index", cached)
        return cached


def _validate_manifest(records: list[ManifestRecord]) -> None:
    seen: dict[str, int] = {}
    for r in records:
        if r.image_id in seen:
            raise DuplicateId(f"duplicate image_id {r.image_id!r}")
        seen[r.image_id] = r.class_id
    ids = sorted({r.class_id for r in records})
    if ids and ids != list(range(ids[-1] + 1)):
        raise NonContiguousClasses(f"class ids {ids} are not 0..K-1")
    name_to_id: dict[str, int] = {}
    id_to_name: dict[int, str] = {}
    for r in records:
        if name_to_id.setdefault(r.class_name, r.class_id) != r.class_id:
            raise FormatError(f"class name {r.class_name!r} maps to two class ids")
        if id_to_name.setdefault(r.class_id, r.class_name) != r.class_name:
            raise FormatError(f"class id {r.class_id} carries two class names")


def load_manifest(
    path: str | os.PathLike,
    validate_tensors: bool = False,
    base_dir: str | None = None,
) -> DatasetManifest:
    """Parse a manifest file, preserving record order as written.

    With validate_tensors=True every tensor_path (relative to base_dir,
    default the manifest's directory) must exist.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    records: list[ManifestRecord] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        image_id, class_id_s, class_name, tensor_path, split = parts
        try:
            class_id = int(class_id_s)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: class_id {class_id_s!r} not an integer")
        if class_id < 0:
            raise FormatError(f"{path}:{lineno}: class_id must be >= 0")
        if split not in SPLITS:
            raise FormatError(f"{path}:{lineno}: split {split!r} not one of {SPLITS}")
        records.append(ManifestRecord(image_id, class_id, class_name, tensor_path, split))

    _validate_manifest(records)

    if validate_tensors:
        root = base_dir if base_dir is not None else os.path.dirname(os.fspath(path))
        for r in records:
            tp = r.tensor_path
            full = tp if os.path.isabs(tp) else os.path.join(root, tp)
            if not os.path.exists(full):
                raise MissingTensor(f"{r.image_id}: tensor file {full} not found")

    return DatasetManifest(records)


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    """Write records in order, one tab-separated line each."""
    _validate_manifest(manifest.records)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in manifest.records:
                fh.write(
                    f"{r.image_id}\t{r.class_id}\t{r.class_name}\t{r.tensor_path}\t{r.split}\n"
                )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
