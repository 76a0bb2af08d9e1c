"""Deterministic forward-pass engine producing per-layer feature maps.

The network is described by a text file (one record per line, tab-separated,
'#' comments ignored):

    input <TAB> C <TAB> H <TAB> W
    layer <TAB> name <TAB> type [<TAB> key=value ...]
    tap   <TAB> name

Layer types and their keys:

    conv     out_ch in_ch kh kw stride pad weight_ref bias_ref
    relu     -
    maxpool  k stride
    lrn      n k alpha beta
    gap      -
    linear   out_dim in_dim weight_ref bias_ref

weight_ref/bias_ref are RSTF paths relative to the descriptor's directory.
Convolution is cross-correlation (no kernel flip) with zero padding; the
output shape rule is out = floor((in + 2*pad - k) / stride) + 1. Feature
maps stay float32 end to end; accumulation happens in float64 so results
are deterministic and platform-stable at the documented tolerances.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .errors import FormatError, IoError, MissingWeights, NonFiniteInput, ShapeMismatch


@dataclass(frozen=True)
class Conv:
    name: str
    out_ch: int
    in_ch: int
    kh: int
    kw: int
    stride: int
    pad: int
    weight_ref: str
    bias_ref: str


@dataclass(frozen=True)
class Relu:
    name: str


@dataclass(frozen=True)
class MaxPool:
    name: str
    k: int
    stride: int


@dataclass(frozen=True)
class Lrn:
    name: str
    n: int
    k: float
    alpha: float
    beta: float


@dataclass(frozen=True)
class Gap:
    name: str


@dataclass(frozen=True)
class Linear:
    name: str
    out_dim: int
    in_dim: int
    weight_ref: str
    bias_ref: str


Layer = Conv | Relu | MaxPool | Lrn | Gap | Linear


@dataclass
class NetworkSpec:
    input_dims: tuple[int, int, int]
    layers: list[Layer]
    tap_points: list[str]
    params: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    shape_chain: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    def layer_output_dims(self, name: str) -> tuple[int, ...]:
        for lname, dims in self.shape_chain:
            if lname == name:
                return dims
        raise KeyError(name)


@dataclass
class ForwardTrace:
    """Captured tap outputs for one image, in network order."""

    image_id: str
    taps: dict[str, np.ndarray]


def _out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _chain_shapes(
    input_dims: tuple[int, int, int], layers: list[Layer]
) -> list[tuple[str, tuple[int, ...]]]:
    dims: tuple[int, ...] = tuple(input_dims)
    chain: list[tuple[str, tuple[int, ...]]] = []
    for idx, layer in enumerate(layers):
        if isinstance(layer, Conv):
            if len(dims) != 3 or dims[0] != layer.in_ch:
                raise ShapeMismatch(
                    f"layer {idx} ({layer.name}): conv expects [{layer.in_ch},H,W], got {dims}"
                )
            h = _out_extent(dims[1], layer.kh, layer.stride, layer.pad)
            w = _out_extent(dims[2], layer.kw, layer.stride, layer.pad)
            if h < 1 or w < 1:
                raise ShapeMismatch(
                    f"layer {idx} ({layer.name}): kernel {layer.kh}x{layer.kw} exceeds padded input {dims}"
                )
            dims = (layer.out_ch, h, w)
        elif isinstance(layer, Relu):
            pass
        elif isinstance(layer, MaxPool):
            if len(dims) != 3:
                raise ShapeMismatch(f"layer {idx} ({layer.name}): maxpool expects [C,H,W], got {dims}")
            h = _out_extent(dims[1], layer.k, layer.stride, 0)
            w = _out_extent(dims[2], layer.k, layer.stride, 0)
            if h < 1 or w < 1:
                raise ShapeMismatch(f"layer {idx} ({layer.name}): pool window exceeds input {dims}")
            dims = (dims[0], h, w)
        elif isinstance(layer, Lrn):
            if len(dims) != 3:
                raise ShapeMismatch(f"layer {idx} ({layer.name}): lrn expects [C,H,W], got {dims}")
        elif isinstance(layer, Gap):
            if len(dims) != 3:
                raise ShapeMismatch(f"layer {idx} ({layer.name}): gap expects [C,H,W], got {dims}")
            dims = (dims[0],)
        elif isinstance(layer, Linear):
            if dims != (layer.in_dim,):
                raise ShapeMismatch(
                    f"layer {idx} ({layer.name}): linear expects [{layer.in_dim}], got {dims}"
                )
            dims = (layer.out_dim,)
        else:  # pragma: no cover
            raise FormatError(f"unknown layer type {layer!r}")
        chain.append((layer.name, dims))
    return chain


def _parse_kv(parts: list[str], path: str, lineno: int) -> dict[str, str]:
    kv: dict[str, str] = {}
    for p in parts:
        if "=" not in p:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {p!r}")
        key, val = p.split("=", 1)
        kv[key] = val
    return kv


def _need(kv: dict[str, str], keys: list[str], path: str, lineno: int) -> list[str]:
    missing = [k for k in keys if k not in kv]
    if missing:
        raise FormatError(f"{path}:{lineno}: missing fields {missing}")
    return [kv[k] for k in keys]


def load_network_spec(path: str | os.PathLike) -> NetworkSpec:
    """Parse a descriptor, load all weights, and verify the shape chain eagerly."""
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    base = os.path.dirname(path)
    input_dims: tuple[int, int, int] | None = None
    layers: list[Layer] = []
    taps: list[str] = []
    names: set[str] = set()

    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        kind = parts[0]
        if kind == "input":
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: input takes C H W")
            input_dims = (int(parts[1]), int(parts[2]), int(parts[3]))
        elif kind == "layer":
            if len(parts) < 3:
                raise FormatError(f"{path}:{lineno}: layer takes name and type")
            name, ltype = parts[1], parts[2]
            if name in names:
                raise FormatError(f"{path}:{lineno}: duplicate layer name {name!r}")
            names.add(name)
            kv = _parse_kv(parts[3:], path, lineno)
            if ltype == "conv":
                oc, ic, kh, kw, st, pd, wr, br = _need(
                    kv,
                    ["out_ch", "in_ch", "kh", "kw", "stride", "pad", "weight_ref", "bias_ref"],
                    path,
                    lineno,
                )
                layers.append(
                    Conv(name, int(oc), int(ic), int(kh), int(kw), int(st), int(pd), wr, br)
                )
            elif ltype == "relu":
                layers.append(Relu(name))
            elif ltype == "maxpool":
                k, st = _need(kv, ["k", "stride"], path, lineno)
                layers.append(MaxPool(name, int(k), int(st)))
            elif ltype == "lrn":
                n, k, alpha, beta = _need(kv, ["n", "k", "alpha", "beta"], path, lineno)
                layers.append(Lrn(name, int(n), float(k), float(alpha), float(beta)))
            elif ltype == "gap":
                layers.append(Gap(name))
            elif ltype == "linear":
                od, idim, wr, br = _need(kv, ["out_dim", "in_dim", "weight_ref", "bias_ref"], path, lineno)
                layers.append(Linear(name, int(od), int(idim), wr, br))
            else:
                raise FormatError(f"{path}:{lineno}: unknown layer type {ltype!r}")
        elif kind == "tap":
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: tap takes a layer name")
            taps.append(parts[1])
        else:
            raise FormatError(f"{path}:{lineno}: unknown record {kind!r}")

    if input_dims is None:
        raise FormatError(f"{path}: missing input record")
    for t in taps:
        if t not in names:
            raise FormatError(f"{path}: tap {t!r} names no layer")

    params: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for idx, layer in enumerate(layers):
        if not isinstance(layer, (Conv, Linear)):
            continue
        wpath = os.path.join(base, layer.weight_ref)
        bpath = os.path.join(base, layer.bias_ref)
        for p in (wpath, bpath):
            if not os.path.exists(p):
                raise MissingWeights(f"layer {layer.name}: weight file {p} not found")
        w = tensorio.read_tensor(wpath)
        b = tensorio.read_tensor(bpath)
        if isinstance(layer, Conv):
            expect_w = (layer.out_ch, layer.in_ch, layer.kh, layer.kw)
        else:
            expect_w = (layer.out_dim, layer.in_dim)
        if w.shape != expect_w:
            raise ShapeMismatch(
                f"layer {idx} ({layer.name}): weight dims {w.shape} != declared {expect_w}"
            )
        expect_b = (expect_w[0],)
        if b.shape != expect_b:
            raise ShapeMismatch(
                f"layer {idx} ({layer.name}): bias dims {b.shape} != declared {expect_b}"
            )
        params[layer.name] = (w, b)

    chain = _chain_shapes(input_dims, layers)
    return NetworkSpec(input_dims, layers, taps, params, chain)


def save_network_spec(spec: NetworkSpec, path: str | os.PathLike) -> None:
    """Emit the descriptor format documented above (weights are not copied)."""
    out: list[str] = ["# repscope network descriptor v1"]
    c, h, w = spec.input_dims
    out.append(f"input\t{c}\t{h}\t{w}")
    for layer in spec.layers:
        if isinstance(layer, Conv):
            out.append(
                f"layer\t{layer.name}\tconv\tout_ch={layer.out_ch}\tin_ch={layer.in_ch}"
                f"\tkh={layer.kh}\tkw={layer.kw}\tstride={layer.stride}\tpad={layer.pad}"
                f"\tweight_ref={layer.weight_ref}\tbias_ref={layer.bias_ref}"
            )
        elif isinstance(layer, Relu):
            out.append(f"layer\t{layer.name}\trelu")
        elif isinstance(layer, MaxPool):
            out.append(f"layer\t{layer.name}\tmaxpool\tk={layer.k}\tstride={layer.stride}")
        elif isinstance(layer, Lrn):
            out.append(
                f"layer\t{layer.name}\tlrn\tn={layer.n}\tk={layer.k!r}"
                f"\talpha={layer.alpha!r}\tbeta={layer.beta!r}"
            )
        elif isinstance(layer, Gap):
            out.append(f"layer\t{layer.name}\tgap")
        elif isinstance(layer, Linear):
            out.append(
                f"layer\t{layer.name}\tlinear\tout_dim={layer.out_dim}\tin_dim={layer.in_dim}"
                f"\tweight_ref={layer.weight_ref}\tbias_ref={layer.bias_ref}"
            )
    for t in spec.tap_points:
        out.append(f"tap\t{t}")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    stride: int,
    pad: int,
) -> np.ndarray:
    """Cross-correlate [Cin,H,W] with [Cout,Cin,kh,kw] kernels, zero padding."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    bias = np.asarray(bias)
    if x.ndim != 3 or weight.ndim != 4 or bias.ndim != 1:
        raise ShapeMismatch("conv2d expects x[Cin,H,W], weight[Cout,Cin,kh,kw], bias[Cout]")
    cout, cin, kh, kw = weight.shape
    if x.shape[0] != cin or bias.shape[0] != cout:
        raise ShapeMismatch(f"conv2d dims inconsistent: x{x.shape} w{weight.shape} b{bias.shape}")
    if stride < 1:
        raise ShapeMismatch("stride must be >= 1")
    ho = _out_extent(x.shape[1], kh, stride, pad)
    wo = _out_extent(x.shape[2], kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"kernel {kh}x{kw} exceeds padded input {x.shape}")

    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # [Cin, Ho, Wo, kh, kw]
    out = np.einsum("oijk,iyxjk->oyx", weight.astype(np.float64), windows)
    out += bias.astype(np.float64)[:, None, None]
    return out.astype(np.float32)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def maxpool2d(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    if x.ndim != 3:
        raise ShapeMismatch(f"maxpool expects [C,H,W], got {x.shape}")
    if k > x.shape[1] or k > x.shape[2]:
        raise ShapeMismatch(f"pool window {k} exceeds input {x.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    return windows[:, ::stride, ::stride].max(axis=(3, 4))


def lrn(x: np.ndarray, n: int, k: float, alpha: float, beta: float) -> np.ndarray:
    """Cross-channel response normalization over a window of n channels."""
    if x.ndim != 3:
        raise ShapeMismatch(f"lrn expects [C,H,W], got {x.shape}")
    a = x.astype(np.float64)
    sq = a * a
    half = n // 2
    padded = np.pad(sq, ((half, half), (0, 0), (0, 0)))
    csum = np.cumsum(padded, axis=0)
    csum = np.concatenate([np.zeros((1,) + csum.shape[1:]), csum], axis=0)
    c = x.shape[0]
    # window sum over channels [c-half, c+half] clipped to the valid range
    win = csum[np.arange(c) + 2 * half + 1] - csum[np.arange(c)]
    out = a / np.power(k + alpha * win, beta)
    return out.astype(np.float32)


def gap(fmap: np.ndarray) -> np.ndarray:
    """Spatial mean per channel: [C,H,W] -> [C]."""
    fmap = np.asarray(fmap)
    if fmap.ndim != 3 or fmap.shape[1] * fmap.shape[2] < 1:
        raise ShapeMismatch(f"gap expects nonempty [C,H,W], got {fmap.shape}")
    return fmap.astype(np.float64).mean(axis=(1, 2)).astype(np.float32)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 1 or weight.ndim != 2 or weight.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"linear dims inconsistent: x{x.shape} w{weight.shape}")
    out = weight.astype(np.float64) @ x.astype(np.float64) + bias.astype(np.float64)
    return out.astype(np.float32)


def save_trace(trace: ForwardTrace, traces_dir: str | os.PathLike) -> list[tuple[str, str, str]]:
    """Write one tap file per layer under <traces_dir>/<image_id>/; returns
    (image_id, layer_name, relative_path) index rows."""
    img_dir = os.path.join(os.fspath(traces_dir), trace.image_id)
    os.makedirs(img_dir, exist_ok=True)
    rows = []
    for layer_name, fmap in trace.taps.items():
        rel = os.path.join(trace.image_id, f"{layer_name}.rstf")
        tensorio.write_tensor(fmap, os.path.join(os.fspath(traces_dir), rel))
        rows.append((trace.image_id, layer_name, rel))
    return rows


def write_trace_index(rows: list[tuple[str, str, str]], traces_dir: str | os.PathLike) -> None:
    path = os.path.join(os.fspath(traces_dir), "trace_index.tsv")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("image_id\tlayer_name\tpath\n")
            for image_id, layer_name, rel in rows:
                fh.write(f"{image_id}\t{layer_name}\t{rel}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_traces(traces_dir: str | os.PathLike) -> list[ForwardTrace]:
    """Rebuild traces from a directory written by save_trace + write_trace_index."""
    traces_dir = os.fspath(traces_dir)
    index = os.path.join(traces_dir, "trace_index.tsv")
    try:
        with open(index, "r", encoding="utf-8") as fh:
            next(fh)
            rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    except OSError as exc:
        raise IoError(f"cannot read {index}: {exc}") from exc
    traces: dict[str, ForwardTrace] = {}
    for image_id, layer_name, rel in rows:
        trace = traces.setdefault(image_id, ForwardTrace(image_id=image_id, taps={}))
        trace.taps[layer_name] = tensorio.read_tensor(os.path.join(traces_dir, rel))
    return list(traces.values())


def forward(spec: NetworkSpec, image: np.ndarray, image_id: str = "") -> ForwardTrace:
    """Run the network on one image, capturing tap outputs in order."""
    image = np.asarray(image, dtype=np.float32)
    if tuple(image.shape) != tuple(spec.input_dims):
        raise ShapeMismatch(f"image dims {image.shape} != network input {spec.input_dims}")
    if not np.isfinite(image).all():
        raise NonFiniteInput("image contains NaN or Inf")

    tap_set = set(spec.tap_points)
    taps: dict[str, np.ndarray] = {}
    x = image
    for idx, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            w, b = spec.params[layer.name]
            x = conv2d(x, w, b, layer.stride, layer.pad)
        elif isinstance(layer, Relu):
            x = relu(x)
        elif isinstance(layer, MaxPool):
            x = maxpool2d(x, layer.k, layer.stride)
        elif isinstance(layer, Lrn):
            x = lrn(x, layer.n, layer.k, layer.alpha, layer.beta)
        elif isinstance(layer, Gap):
            x = gap(x)
        elif isinstance(layer, Linear):
            w, b = spec.params[layer.name]
            x = linear(x, w, b)
        expected = spec.shape_chain[idx][1]
        if tuple(x.shape) != expected:
            raise ShapeMismatch(
                f"layer {idx} ({layer.name}): produced {x.shape}, chain predicts {expected}"
            )
        if layer.name in tap_set:
            taps[layer.name] = x.copy()
    return ForwardTrace(image_id=image_id, taps=taps)
