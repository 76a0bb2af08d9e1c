"""Deterministic raster output: RDM heatmaps, CAM overlays, tables.

Only binary P6 PPM is emitted; it is codec-free and byte-reproducible.
Values are clamped to [0,1] before colorization and quantized half-up
(round(v*255 + 0.5) down), so identical inputs give identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .cam import upsample_bilinear
from .errors import IoError, NonFiniteInput, ShapeMismatch


@dataclass(frozen=True)
class ColorMap:
    control_points: tuple[tuple[float, tuple[int, int, int]], ...]

    def __post_init__(self) -> None:
        pos = [p for p, _ in self.control_points]
        if len(pos) < 2 or pos[0] != 0.0 or pos[-1] != 1.0 or sorted(pos) != pos:
            raise ValueError("control points must ascend from 0.0 to 1.0")


# blue -> cyan -> green -> yellow -> red ramp
DEFAULT_COLORMAP = ColorMap(
    (
        (0.0, (0, 0, 255)),
        (0.25, (0, 255, 255)),
        (0.5, (0, 255, 0)),
        (0.75, (255, 255, 0)),
        (1.0, (255, 0, 0)),
    )
)


def quantize_u8(v: np.ndarray) -> np.ndarray:
    """Half-up quantization of [0,1] floats to u8."""
    return np.clip(np.floor(np.asarray(v) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def colorize(values: np.ndarray, cmap: ColorMap = DEFAULT_COLORMAP) -> np.ndarray:
    """Map clamped [0,1] values to RGB u8 via piecewise-linear interpolation."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    pos = np.array([p for p, _ in cmap.control_points])
    cols = np.array([c for _, c in cmap.control_points], dtype=np.float64)
    seg = np.clip(np.searchsorted(pos, v, side="right") - 1, 0, len(pos) - 2)
    p0 = pos[seg]
    p1 = pos[seg + 1]
    t = np.where(p1 > p0, (v - p0) / np.where(p1 > p0, p1 - p0, 1.0), 0.0)
    rgb = cols[seg] * (1.0 - t[..., None]) + cols[seg + 1] * t[..., None]
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


def write_ppm(rgb: np.ndarray, path: str | os.PathLike) -> None:
    """Binary P6 with maxval 255."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"expected [H,W,3] u8, got {rgb.shape}")
    h, w = rgb.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(rgb.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ShapeMismatch(f"{path}: not a maxval-255 P6 PPM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)


def render_heatmap(
    m: np.ndarray,
    path: str | os.PathLike,
    cmap: ColorMap = DEFAULT_COLORMAP,
    zoom: int = 1,
) -> None:
    """One pixel per matrix cell (times an integer zoom), clamped to [0,1]."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"heatmap needs a 2-D matrix, got {m.shape}")
    if not np.isfinite(m).all():
        raise NonFiniteInput("matrix contains NaN or Inf")
    if zoom < 1:
        raise ValueError("zoom must be >= 1")
    rgb = colorize(m, cmap)
    if zoom > 1:
        rgb = rgb.repeat(zoom, axis=0).repeat(zoom, axis=1)
    write_ppm(rgb, path)


def overlay_cam(
    image: np.ndarray,
    cam_grid: np.ndarray,
    path: str | os.PathLike,
    alpha: float = 0.5,
    cmap: ColorMap = DEFAULT_COLORMAP,
) -> None:
    """Blend a colorized CAM over an RGB image in [0,1].

    The grid is upsampled (align-corners bilinear) to the image size and
    min-max normalized; a constant grid maps to 0.5 everywhere.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeMismatch(f"image must be [3,H,W], got {image.shape}")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    if not np.isfinite(image).all() or not np.isfinite(np.asarray(cam_grid)).all():
        raise NonFiniteInput("overlay inputs contain NaN or Inf")
    h, w = image.shape[1], image.shape[2]
    grid = upsample_bilinear(np.asarray(cam_grid, dtype=np.float64), h, w)
    lo, hi = grid.min(), grid.max()
    if hi > lo:
        norm = (grid - lo) / (hi - lo)
    else:
        norm = np.full_like(grid, 0.5)
    color = colorize(norm, cmap).astype(np.float64) / 255.0
    img = np.clip(image, 0.0, 1.0).transpose(1, 2, 0)
    blended = (1.0 - alpha) * img + alpha * color
    write_ppm(quantize_u8(blended), path)


def write_table(
    rows: Iterable[Sequence], path: str | os.PathLike, header: Sequence[str]
) -> None:
    """Tab-separated text with a header row; row order is the caller's."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\t".join(header) + "\n")
            for row in rows:
                fh.write("\t".join(str(x) for x in row) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
