"""Image-folder export: decode, resize or crop, scale to [0,1], write RSTF.

The source directory holds one subdirectory per class; class ids are
assigned in sorted class-name order so they come out contiguous. Rows are
emitted in deterministic (class_name, filename) order. Undecodable or
unusable images are skipped with a warning and recorded in excluded.tsv.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import ExportError
from . import rstf

RESIZE = "resize"
CENTER_CROP = "center_crop"


@dataclass(frozen=True)
class ExportJob:
    source: str
    target_dims: tuple[int, int, int]  # [C,H,W]
    resize_policy: str = RESIZE
    output_dir: str = "export"

    def __post_init__(self) -> None:
        c = self.target_dims[0]
        if c not in (1, 3) or min(self.target_dims) < 1:
            raise ExportError(f"target_dims must be [1|3, H, W] positive, got {self.target_dims}")
        if self.resize_policy not in (RESIZE, CENTER_CROP):
            raise ExportError(f"resize_policy must be {RESIZE} or {CENTER_CROP}")


def _convert(img: Image.Image, job: ExportJob) -> np.ndarray:
    c, th, tw = job.target_dims
    img = img.convert("RGB" if c == 3 else "L")
    if job.resize_policy == RESIZE:
        img = img.resize((tw, th), Image.BILINEAR)
    else:
        w, h = img.size
        if w < tw or h < th:
            raise ExportError(f"source {w}x{h} smaller than crop {tw}x{th}")
        left = (w - tw) // 2
        top = (h - th) // 2
        img = img.crop((left, top, left + tw, top + th))
    arr = np.asarray(img, dtype=np.float32) / 255.0
    if c == 1:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def export_images(job: ExportJob) -> str:
    """Write tensors/ + manifest.tsv + excluded.tsv; returns the manifest path."""
    classes = sorted(
        d for d in os.listdir(job.source) if os.path.isdir(os.path.join(job.source, d))
    )
    if not classes:
        raise ExportError(f"no class subdirectories under {job.source}")
    os.makedirs(os.path.join(job.output_dir, "tensors"), exist_ok=True)

    rows: list[str] = []
    excluded: list[tuple[str, str]] = []
    for class_id, class_name in enumerate(classes):
        class_dir = os.path.join(job.source, class_name)
        for fname in sorted(os.listdir(class_dir)):
            fpath = os.path.join(class_dir, fname)
            if not os.path.isfile(fpath):
                continue
            image_id = f"{class_name}__{os.path.splitext(fname)[0]}"
            try:
                with Image.open(fpath) as img:
                    tensor = _convert(img, job)
            except (ExportError, OSError) as exc:
                print(f"rsexport: skipping {fpath}: {exc}", file=sys.stderr)
                excluded.append((os.path.join(class_name, fname), str(exc)))
                continue
            rel = f"tensors/{image_id}.rstf"
            rstf.write(tensor, os.path.join(job.output_dir, rel))
            rows.append(f"{image_id}\t{class_id}\t{class_name}\t{rel}\ttrain")

    manifest_path = os.path.join(job.output_dir, "manifest.tsv")
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        c, h, w = job.target_dims
        fh.write(f"# exported by rsexport: target={c}x{h}x{w} policy={job.resize_policy}\n")
        fh.write("\n".join(rows) + "\n")
    with open(os.path.join(job.output_dir, "excluded.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path\treason\n")
        for path, reason in excluded:
            fh.write(f"{path}\t{reason}\n")
    return manifest_path
