"""Feature maps -> normalized response vectors -> thresholded activity patterns.

The pipeline for one image at one tap layer:

1. take the captured feature-map stack [C,H,W]
2. normalize the whole stack jointly by its maximum (all-zero if max <= 0)
3. summarize each channel into one response value: by default the mean of
   the largest 80% of that channel's normalized values (``top_fraction_mean``);
   ``scaled_mean`` instead multiplies the plain mean by the fraction
4. pool response values per (class, layer) into a threshold t = mean of all
   vector entries of that class's images
5. zero every response not strictly above t; survivors are the effective
   response values

Tap layers are expected to be rectified (non-negative) so normalized values
and thresholds live in [0,1].
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import tensorio
from .errors import (
    EmptyClass,
    EmptyInput,
    IoError,
    LayerMismatch,
    ManifestMismatch,
    NonFiniteInput,
    ShapeMismatch,
)
from .net import ForwardTrace
from .tensorio import DatasetManifest

TOP_FRACTION_MEAN = "top_fraction_mean"
SCALED_MEAN = "scaled_mean"


@dataclass(frozen=True)
class AnalysisConfig:
    fraction: float = 0.8
    fraction_mode: str = TOP_FRACTION_MEAN
    strict_threshold: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError(f"fraction must be in (0,1], got {self.fraction}")
        if self.fraction_mode not in (TOP_FRACTION_MEAN, SCALED_MEAN):
            raise ValueError(f"unknown fraction_mode {self.fraction_mode!r}")


@dataclass
class ResponseVector:
    image_id: str
    layer_name: str
    values: np.ndarray  # [n_channels] float64


@dataclass(frozen=True)
class ClassThreshold:
    class_id: int
    layer_name: str
    t: float


@dataclass
class ActivityPattern:
    image_id: str
    layer_name: str
    class_id: int
    threshold: float
    values: np.ndarray  # entry is 0 or an effective response value > threshold

    @property
    def activated_mask(self) -> np.ndarray:
        return self.values != 0.0


def normalize_fmap(m: np.ndarray) -> np.ndarray:
    """Divide the whole stack by its joint maximum; all-zero when max <= 0."""
    m = np.asarray(m, dtype=np.float64)
    if not np.isfinite(m).all():
        raise NonFiniteInput("feature map contains NaN or Inf")
    mx = m.max() if m.size else 0.0
    if mx <= 0.0:
        return np.zeros_like(m)
    return m / mx


def response_value(g: np.ndarray, cfg: AnalysisConfig = AnalysisConfig()) -> float:
    """Summarize one normalized channel map into a scalar response."""
    flat = np.asarray(g, dtype=np.float64).ravel()
    if flat.size == 0:
        raise EmptyInput("empty feature map")
    if cfg.fraction_mode == SCALED_MEAN:
        return float(cfg.fraction * flat.mean())
    m = math.ceil(cfg.fraction * flat.size)
    top = np.partition(flat, flat.size - m)[flat.size - m :]
    return float(top.mean())


def build_response_vectors(
    traces: Iterable[ForwardTrace], cfg: AnalysisConfig = AnalysisConfig()
) -> list[ResponseVector]:
    """One ResponseVector per (image, tap layer); normalization is joint
    across all channels of a layer."""
    out: list[ResponseVector] = []
    for trace in traces:
        for layer_name, fmap in trace.taps.items():
            if fmap.ndim != 3:
                raise ShapeMismatch(f"tap {layer_name}: expected [C,H,W], got {fmap.shape}")
            g = normalize_fmap(fmap)
            if g.size and g.min() < 0.0:
                raise ValueError(
                    f"tap {layer_name} has negative values after normalization; "
                    "response vectors require a rectified tap layer"
                )
            values = np.array([response_value(g[c], cfg) for c in range(g.shape[0])])
            out.append(ResponseVector(trace.image_id, layer_name, values))
    if not out:
        raise EmptyInput("no traces given")
    return out


def class_thresholds(
    vectors: Iterable[ResponseVector], manifest: DatasetManifest
) -> list[ClassThreshold]:
    """Mean of every response-vector entry, pooled per (class, layer).

    The reduction order is fixed (image_id ascending, then channel) so the
    result is reproducible across platforms and input orderings.
    """
    vectors = list(vectors)
    by_image = {r.image_id: r.class_id for r in manifest.records}
    for v in vectors:
        if v.image_id not in by_image:
            raise ManifestMismatch(f"image {v.image_id!r} not in manifest")

    layers: list[str] = []
    for v in vectors:
        if v.layer_name not in layers:
            layers.append(v.layer_name)
    classes = sorted({r.class_id for r in manifest.records})

    grouped: dict[tuple[int, str], list[ResponseVector]] = {}
    for v in vectors:
        grouped.setdefault((by_image[v.image_id], v.layer_name), []).append(v)

    out: list[ClassThreshold] = []
    for layer_name in layers:
        for class_id in classes:
            members = grouped.get((class_id, layer_name), [])
            if not members:
                raise EmptyClass(f"class {class_id} has no images at layer {layer_name}")
            members.sort(key=lambda v: v.image_id)
            stacked = np.concatenate([m.values for m in members])
            out.append(ClassThreshold(class_id, layer_name, float(stacked.mean())))
    return out


def apply_threshold(
    v: ResponseVector, t: ClassThreshold, cfg: AnalysisConfig = AnalysisConfig()
) -> ActivityPattern:
    """Keep responses strictly above t (>= when strict_threshold is off)."""
    if v.layer_name != t.layer_name:
        raise LayerMismatch(f"vector layer {v.layer_name!r} != threshold layer {t.layer_name!r}")
    if cfg.strict_threshold:
        keep = v.values > t.t
    else:
        keep = v.values >= t.t
    values = np.where(keep, v.values, 0.0)
    return ActivityPattern(v.image_id, v.layer_name, t.class_id, t.t, values)


def build_patterns(
    vectors: Iterable[ResponseVector],
    thresholds: Iterable[ClassThreshold],
    manifest: DatasetManifest,
    cfg: AnalysisConfig = AnalysisConfig(),
) -> list[ActivityPattern]:
    """Threshold every vector with its own class's threshold for its layer."""
    tmap = {(t.class_id, t.layer_name): t for t in thresholds}
    out: list[ActivityPattern] = []
    for v in vectors:
        class_id = manifest.class_of(v.image_id)
        key = (class_id, v.layer_name)
        if key not in tmap:
            raise EmptyClass(f"no threshold for class {class_id} at layer {v.layer_name}")
        out.append(apply_threshold(v, tmap[key], cfg))
    return out


# persistence: per-layer [n_images, n_channels] RSTF + row index sidecar


def save_layer_matrix(
    rows: list[tuple[str, int]], matrix: np.ndarray, stem: str | os.PathLike
) -> None:
    """Write matrix to <stem>.rstf and (row, image_id, class_id) to <stem>.rows.tsv."""
    tensorio.write_tensor(matrix.astype(np.float32), f"{stem}.rstf")
    try:
        with open(f"{stem}.rows.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("row\timage_id\tclass_id\n")
            for i, (image_id, class_id) in enumerate(rows):
                fh.write(f"{i}\t{image_id}\t{class_id}\n")
    except OSError as exc:
        raise IoError(f"cannot write {stem}.rows.tsv: {exc}") from exc


def load_layer_matrix(stem: str | os.PathLike) -> tuple[list[tuple[str, int]], np.ndarray]:
    matrix = tensorio.read_tensor(f"{stem}.rstf")
    rows: list[tuple[str, int]] = []
    try:
        with open(f"{stem}.rows.tsv", "r", encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                _, image_id, class_id = line.rstrip("\n").split("\t")
                rows.append((image_id, int(class_id)))
    except OSError as exc:
        raise IoError(f"cannot read {stem}.rows.tsv: {exc}") from exc
    return rows, matrix


def save_thresholds(thresholds: Iterable[ClassThreshold], path: str | os.PathLike) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("class_id\tlayer_name\tt\n")
            for t in thresholds:
                fh.write(f"{t.class_id}\t{t.layer_name}\t{t.t!r}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_thresholds(path: str | os.PathLike) -> list[ClassThreshold]:
    out: list[ClassThreshold] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                class_id, layer_name, t = line.rstrip("\n").split("\t")
                out.append(ClassThreshold(int(class_id), layer_name, float(t)))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return out
