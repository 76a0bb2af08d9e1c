"""Deterministic toy network and three-class stimulus set.

The toy pipeline is engineered so the analysis outputs are predictable:

- each class places a unit impulse at a fixed position in an 8x8 image,
  plus low-amplitude seeded noise;
- conv1 (1x1 kernels) copies the image at three skewed gains, so GAP
  features at relu1 are class-ambiguous: the spatial mean is blind to
  where the impulse sits;
- conv2 holds one single-tap 5x5 kernel per class whose offset pushes the
  other classes' impulse responses outside the valid (unpadded) output
  window, so from relu2 upward the impulse position has become channel
  identity and GAP features separate the classes;
- conv3..conv5 are fixed 1x1 mixing layers that keep per-class channel
  profiles distinct through the top tap.

Everything is seeded and hand-specified; two runs produce bit-identical
tensors, traces, and downstream analyses.
"""

from __future__ import annotations

import os

import numpy as np

from . import tensorio
from .net import Conv, NetworkSpec, Relu, _chain_shapes, save_network_spec
from .tensorio import DatasetManifest, ManifestRecord

CLASS_NAMES = ("alpha", "beta", "gamma")
IMPULSE_POSITIONS = ((2, 2), (2, 5), (5, 2))
INPUT_DIMS = (1, 8, 8)
TAPS = ("relu1", "relu2", "relu3", "relu4", "relu5")


def _weights() -> dict[str, tuple[np.ndarray, np.ndarray]]:
    w1 = np.zeros((3, 1, 1, 1), dtype=np.float32)
    w1[0, 0, 0, 0] = 1.0
    w1[1, 0, 0, 0] = 0.35
    w1[2, 0, 0, 0] = 0.15

    # single-tap kernels; the offsets blind each kernel to the other
    # classes' impulse positions through the 4x4 output window
    w2 = np.zeros((3, 3, 5, 5), dtype=np.float32)
    w2[0, 0, 1, 1] = 1.0
    w2[1, 0, 1, 3] = 1.0
    w2[2, 0, 3, 1] = 1.0

    w3 = np.zeros((4, 3, 1, 1), dtype=np.float32)
    for i, row in enumerate(((1.0, 0.2, 0.0), (0.0, 1.0, 0.2), (0.2, 0.0, 1.0), (0.3, 0.3, 0.3))):
        w3[i, :, 0, 0] = row

    w4 = np.zeros((4, 4, 1, 1), dtype=np.float32)
    for i, row in enumerate(
        ((1.0, 0.1, 0.0, 0.0), (0.0, 1.0, 0.1, 0.0), (0.0, 0.0, 1.0, 0.1), (0.1, 0.0, 0.0, 1.0))
    ):
        w4[i, :, 0, 0] = row

    w5 = np.zeros((3, 4, 1, 1), dtype=np.float32)
    for i, row in enumerate(((1.0, 0.0, 0.0, 0.2), (0.0, 1.0, 0.0, 0.2), (0.0, 0.0, 1.0, 0.2))):
        w5[i, :, 0, 0] = row

    return {
        "conv1": (w1, np.zeros(3, dtype=np.float32)),
        "conv2": (w2, np.zeros(3, dtype=np.float32)),
        "conv3": (w3, np.zeros(4, dtype=np.float32)),
        "conv4": (w4, np.zeros(4, dtype=np.float32)),
        "conv5": (w5, np.zeros(3, dtype=np.float32)),
    }


def _layers() -> list:
    specs = {name: (w.shape[0], w.shape[1], w.shape[2], w.shape[3]) for name, (w, _) in _weights().items()}
    layers: list = []
    for i in range(1, 6):
        name = f"conv{i}"
        oc, ic, kh, kw = specs[name]
        layers.append(Conv(name, oc, ic, kh, kw, stride=1, pad=0,
                           weight_ref=f"weights/{name}_w.rstf", bias_ref=f"weights/{name}_b.rstf"))
        layers.append(Relu(f"relu{i}"))
    return layers


def toy_network() -> NetworkSpec:
    """The fixed 5-conv network, fully in memory."""
    layers = _layers()
    return NetworkSpec(
        input_dims=INPUT_DIMS,
        layers=layers,
        tap_points=list(TAPS),
        params=dict(_weights()),
        shape_chain=_chain_shapes(INPUT_DIMS, layers),
    )


def toy_network_files(out_dir: str | os.PathLike) -> str:
    """Write the descriptor plus weight tensors; returns the descriptor path."""
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "weights"), exist_ok=True)
    for name, (w, b) in _weights().items():
        tensorio.write_tensor(w, os.path.join(out_dir, "weights", f"{name}_w.rstf"))
        tensorio.write_tensor(b, os.path.join(out_dir, "weights", f"{name}_b.rstf"))
    path = os.path.join(out_dir, "toynet.txt")
    save_network_spec(toy_network(), path)
    return path


def toy_image(class_id: int, rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    img = rng.uniform(0.0, noise, size=INPUT_DIMS).astype(np.float32)
    py, px = IMPULSE_POSITIONS[class_id]
    img[0, py, px] += 1.0
    return img


def toy_dataset(
    n_per_class: int = 30, noise: float = 0.05, seed: int = 7
) -> tuple[DatasetManifest, dict[str, np.ndarray]]:
    """Seeded stimulus set: (manifest, image_id -> [1,8,8] tensor)."""
    rng = np.random.default_rng(seed)
    records: list[ManifestRecord] = []
    images: dict[str, np.ndarray] = {}
    for class_id, class_name in enumerate(CLASS_NAMES):
        for i in range(n_per_class):
            image_id = f"{class_name}_{i:03d}"
            images[image_id] = toy_image(class_id, rng, noise)
            records.append(
                ManifestRecord(image_id, class_id, class_name, f"images/{image_id}.rstf", "train")
            )
    return DatasetManifest(records), images


def toy_dataset_files(
    out_dir: str | os.PathLike, n_per_class: int = 30, noise: float = 0.05, seed: int = 7
) -> str:
    """Write image tensors and the manifest; returns the manifest path."""
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    manifest, images = toy_dataset(n_per_class, noise, seed)
    for image_id, img in images.items():
        tensorio.write_tensor(img, os.path.join(out_dir, "images", f"{image_id}.rstf"))
    path = os.path.join(out_dir, "manifest.tsv")
    tensorio.save_manifest(manifest, path)
    return path
