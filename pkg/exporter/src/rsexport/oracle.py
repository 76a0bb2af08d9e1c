"""Reference forward pass and RDM, computed with torch/numpy.

These re-implement the analysis semantics on a mature numerical stack so
the primary engine can be diffed against genuinely independent code. The
only shared surface is the on-disk formats.

torch's LocalResponseNorm divides alpha by the window size; the analysis
formula does not, so the oracle passes alpha*n to torch.
"""

from __future__ import annotations

import os

import numpy as np
import torch
import torch.nn.functional as F

from . import ExportError
from . import rstf


def _parse_descriptor(path):
    base = os.path.dirname(os.fspath(path))
    input_dims = None
    layers = []
    taps = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if parts[0] == "input":
                input_dims = tuple(int(x) for x in parts[1:4])
            elif parts[0] == "layer":
                kv = dict(p.split("=", 1) for p in parts[3:])
                layers.append({"name": parts[1], "type": parts[2], **kv})
            elif parts[0] == "tap":
                taps.append(parts[1])
    if input_dims is None:
        raise ExportError(f"{path}: missing input record")
    for layer in layers:
        if layer["type"] in ("conv", "linear"):
            layer["w"] = rstf.read(os.path.join(base, layer["weight_ref"]))
            layer["b"] = rstf.read(os.path.join(base, layer["bias_ref"]))
    return input_dims, layers, taps


def oracle_forward(descriptor_path, image: np.ndarray) -> dict[str, np.ndarray]:
    """Tap outputs for one image, computed in double precision with torch."""
    _, layers, taps = _parse_descriptor(descriptor_path)
    x = torch.from_numpy(np.asarray(image, dtype=np.float64)).unsqueeze(0)
    out: dict[str, np.ndarray] = {}
    for layer in layers:
        t = layer["type"]
        if t == "conv":
            w = torch.from_numpy(layer["w"].astype(np.float64))
            b = torch.from_numpy(layer["b"].astype(np.float64))
            x = F.conv2d(x, w, b, stride=int(layer["stride"]), padding=int(layer["pad"]))
        elif t == "relu":
            x = F.relu(x)
        elif t == "maxpool":
            x = F.max_pool2d(x, kernel_size=int(layer["k"]), stride=int(layer["stride"]))
        elif t == "lrn":
            n = int(layer["n"])
            x = F.local_response_norm(
                x, size=n, alpha=float(layer["alpha"]) * n, beta=float(layer["beta"]),
                k=float(layer["k"]),
            )
        elif t == "gap":
            x = x.mean(dim=(2, 3))
        elif t == "linear":
            w = torch.from_numpy(layer["w"].astype(np.float64))
            b = torch.from_numpy(layer["b"].astype(np.float64))
            x = F.linear(x, w, b)
        else:
            raise ExportError(f"oracle cannot run layer type {t!r}")
        if layer["name"] in taps:
            out[layer["name"]] = x.squeeze(0).numpy().astype(np.float32)
    return out


def oracle_forward_dir(descriptor_path, manifest_path, out_dir) -> None:
    """Mirror of the analysis CLI's trace layout, for file-level diffing."""
    base = os.path.dirname(os.fspath(manifest_path))
    rows = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            image_id, _, _, tensor_path, _ = line.split("\t")
            image = rstf.read(os.path.join(base, tensor_path))
            taps = oracle_forward(descriptor_path, image)
            os.makedirs(os.path.join(out_dir, image_id), exist_ok=True)
            for layer_name, fmap in taps.items():
                rel = os.path.join(image_id, f"{layer_name}.rstf")
                rstf.write(fmap, os.path.join(out_dir, rel))
                rows.append((image_id, layer_name, rel))
    with open(os.path.join(out_dir, "trace_index.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("image_id\tlayer_name\tpath\n")
        for image_id, layer_name, rel in rows:
            fh.write(f"{image_id}\t{layer_name}\t{rel}\n")


def oracle_rdm(patterns: np.ndarray) -> np.ndarray:
    """1 - corrcoef over pattern rows; constant rows pair at the
    uncorrelated value 1, matching the analysis convention."""
    p = np.asarray(patterns, dtype=np.float64)
    n = p.shape[0]
    constant = p.std(axis=1) == 0.0
    with np.errstate(invalid="ignore"):
        d = 1.0 - np.corrcoef(p)
    d = np.clip(d, 0.0, 2.0)
    for i in range(n):
        for j in range(n):
            if i != j and (constant[i] or constant[j]):
                d[i, j] = 1.0
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return d
