"""Checkpoint export: .npz checkpoints -> network descriptor + RSTF weights.

A checkpoint is a numpy .npz archive holding an ``arch`` JSON entry
(input_dims plus an ordered layer list) and ``<name>.weight`` /
``<name>.bias`` arrays for conv and linear layers. Conv hyperparameters
that live in the weight shapes (out_ch, in_ch, kh, kw) are derived from
the arrays; stride/pad/groups come from the arch record. Grouped
convolutions cannot be expressed in the analysis vocabulary and are
rejected.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import ExportError, UnsupportedLayer
from . import rstf


def save_checkpoint(arch: dict, params: dict[str, np.ndarray], path) -> None:
    payload = {"arch": np.array(json.dumps(arch))}
    payload.update({k: np.asarray(v, dtype=np.float32) for k, v in params.items()})
    np.savez(path, **payload)


def _shape_after(layer: dict, dims: tuple, w: np.ndarray | None, index: int):
    t = layer["type"]
    if t == "conv":
        oc, ic, kh, kw = w.shape
        stride, pad = int(layer.get("stride", 1)), int(layer.get("pad", 0))
        if len(dims) != 3 or dims[0] != ic:
            raise ExportError(f"layer {index}: conv expects [{ic},H,W], chain has {dims}")
        h = (dims[1] + 2 * pad - kh) // stride + 1
        v = (dims[2] + 2 * pad - kw) // stride + 1
        if h < 1 or v < 1:
            raise ExportError(f"layer {index}: kernel exceeds input {dims}")
        return (oc, h, v)
    if t == "relu" or t == "lrn":
        return dims
    if t == "maxpool":
        k, stride = int(layer["k"]), int(layer["stride"])
        h = (dims[1] - k) // stride + 1
        v = (dims[2] - k) // stride + 1
        if h < 1 or v < 1:
            raise ExportError(f"layer {index}: pool window exceeds input {dims}")
        return (dims[0], h, v)
    if t == "gap":
        return (dims[0],)
    if t == "linear":
        od, idim = w.shape
        if dims != (idim,):
            raise ExportError(f"layer {index}: linear expects [{idim}], chain has {dims}")
        return (od,)
    raise UnsupportedLayer(f"layer {index}: type {t!r} has no analysis equivalent")


def export_network(checkpoint_path, taps: list[str], output_dir) -> str:
    """Write descriptor + weight tensors; returns the descriptor path."""
    archive = np.load(checkpoint_path)
    if "arch" not in archive:
        raise ExportError(f"{checkpoint_path}: no arch entry")
    arch = json.loads(str(archive["arch"]))
    input_dims = tuple(int(x) for x in arch["input_dims"])
    layers = arch["layers"]
    names = [l["name"] for l in layers]
    if len(set(names)) != len(names):
        raise ExportError("duplicate layer names in checkpoint")
    for t in taps:
        if t not in names:
            raise ExportError(f"tap {t!r} names no checkpoint layer")

    # validate the whole chain before anything is written
    dims = input_dims
    weights: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for index, layer in enumerate(layers):
        w = None
        if layer["type"] in ("conv", "linear"):
            if int(layer.get("groups", 1)) != 1:
                raise UnsupportedLayer(
                    f"layer {index} ({layer['name']}): grouped conv (groups="
                    f"{layer['groups']}) cannot be expressed; merge the groups first"
                )
            wkey, bkey = f"{layer['name']}.weight", f"{layer['name']}.bias"
            if wkey not in archive or bkey not in archive:
                raise ExportError(f"layer {index} ({layer['name']}): missing {wkey}/{bkey}")
            w = np.asarray(archive[wkey], dtype=np.float32)
            b = np.asarray(archive[bkey], dtype=np.float32)
            expected_rank = 4 if layer["type"] == "conv" else 2
            if w.ndim != expected_rank or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise ExportError(f"layer {index} ({layer['name']}): bad parameter shapes")
            weights[layer["name"]] = (w, b)
        dims = _shape_after(layer, dims, w, index)

    os.makedirs(os.path.join(output_dir, "weights"), exist_ok=True)
    lines = ["# exported by rsexport", "input\t{}\t{}\t{}".format(*input_dims)]
    for layer in layers:
        name, t = layer["name"], layer["type"]
        if t == "conv":
            w, b = weights[name]
            oc, ic, kh, kw = w.shape
            rstf.write(w, os.path.join(output_dir, "weights", f"{name}_w.rstf"))
            rstf.write(b, os.path.join(output_dir, "weights", f"{name}_b.rstf"))
            lines.append(
                f"layer\t{name}\tconv\tout_ch={oc}\tin_ch={ic}\tkh={kh}\tkw={kw}"
                f"\tstride={int(layer.get('stride', 1))}\tpad={int(layer.get('pad', 0))}"
                f"\tweight_ref=weights/{name}_w.rstf\tbias_ref=weights/{name}_b.rstf"
            )
        elif t == "relu":
            lines.append(f"layer\t{name}\trelu")
        elif t == "maxpool":
            lines.append(f"layer\t{name}\tmaxpool\tk={int(layer['k'])}\tstride={int(layer['stride'])}")
        elif t == "lrn":
            lines.append(
                f"layer\t{name}\tlrn\tn={int(layer['n'])}\tk={float(layer['k'])!r}"
                f"\talpha={float(layer['alpha'])!r}\tbeta={float(layer['beta'])!r}"
            )
        elif t == "gap":
            lines.append(f"layer\t{name}\tgap")
        elif t == "linear":
            w, b = weights[name]
            od, idim = w.shape
            rstf.write(w, os.path.join(output_dir, "weights", f"{name}_w.rstf"))
            rstf.write(b, os.path.join(output_dir, "weights", f"{name}_b.rstf"))
            lines.append(
                f"layer\t{name}\tlinear\tout_dim={od}\tin_dim={idim}"
                f"\tweight_ref=weights/{name}_w.rstf\tbias_ref=weights/{name}_b.rstf"
            )
    lines.extend(f"tap\t{t}" for t in taps)
    descriptor = os.path.join(output_dir, "network.txt")
    with open(descriptor, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return descriptor


def make_toy_checkpoint(path, seed: int = 99) -> None:
    """Seeded 5-conv toy checkpoint (channels 4,6,8,8,6) for cross-validation."""
    rng = np.random.default_rng(seed)
    arch = {
        "input_dims": [3, 16, 16],
        "layers": [
            {"name": "conv1", "type": "conv", "stride": 1, "pad": 1},
            {"name": "relu1", "type": "relu"},
            {"name": "norm1", "type": "lrn", "n": 5, "k": 2.0, "alpha": 1e-4, "beta": 0.75},
            {"name": "conv2", "type": "conv", "stride": 2, "pad": 1},
            {"name": "relu2", "type": "relu"},
            {"name": "pool2", "type": "maxpool", "k": 2, "stride": 2},
            {"name": "conv3", "type": "conv", "stride": 1, "pad": 1},
            {"name": "relu3", "type": "relu"},
            {"name": "conv4", "type": "conv", "stride": 1, "pad": 1},
            {"name": "relu4", "type": "relu"},
            {"name": "conv5", "type": "conv", "stride": 1, "pad": 1},
            {"name": "relu5", "type": "relu"},
            {"name": "gpool", "type": "gap"},
            {"name": "fc", "type": "linear"},
        ],
    }
    shapes = {
        "conv1": (4, 3, 3, 3),
        "conv2": (6, 4, 3, 3),
        "conv3": (8, 6, 3, 3),
        "conv4": (8, 8, 3, 3),
        "conv5": (6, 8, 3, 3),
    }
    params: dict[str, np.ndarray] = {}
    for name, shape in shapes.items():
        params[f"{name}.weight"] = (rng.standard_normal(shape) * 0.3).astype(np.float32)
        params[f"{name}.bias"] = (rng.standard_normal(shape[0]) * 0.05).astype(np.float32)
    params["fc.weight"] = (rng.standard_normal((3, 6)) * 0.3).astype(np.float32)
    params["fc.bias"] = np.zeros(3, dtype=np.float32)
    save_checkpoint(arch, params, path)
