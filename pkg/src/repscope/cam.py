"""Per-layer GAP classifier heads and class activation maps.

A head is a multinomial logistic regression over a layer's GAP features,
trained by full-batch gradient descent from zero initialization: the
objective (mean cross-entropy plus an L2 penalty on the weights, bias
excluded) is convex, so the result is deterministic and seed-free. The
head's weight row for a class doubles as the CAM projection: the map for
class c is the per-pixel weighted sum of feature maps, and its spatial
mean plus the bias reproduces the class logit exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import tensorio
from .errors import (
    BadClass,
    DegenerateLabels,
    Diverged,
    IoError,
    MissingHead,
    NonFiniteInput,
    ShapeMismatch,
)
from .net import ForwardTrace, gap
from .tensorio import DatasetManifest


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    l2: float = 1e-4
    max_iters: int = 5000
    grad_tol: float = 1e-6  # infinity norm over all gradient entries

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.l2 < 0 or self.max_iters < 1 or self.grad_tol <= 0:
            raise ValueError(f"invalid training config {self}")


@dataclass(frozen=True)
class TrainMeta:
    iterations: int
    final_loss: float
    final_grad_norm: float


@dataclass
class GapHead:
    layer_name: str
    w: np.ndarray  # [n_classes, n_channels]
    b: np.ndarray  # [n_classes]
    train_meta: TrainMeta
    loss_history: np.ndarray | None = None

    @property
    def n_classes(self) -> int:
        return self.w.shape[0]

    @property
    def n_channels(self) -> int:
        return self.w.shape[1]


@dataclass
class CamMap:
    image_id: str
    layer_name: str
    class_id: int
    grid: np.ndarray  # [H,W], unbounded sign


@dataclass(frozen=True)
class PredictionRow:
    image_id: str
    layer_name: str
    rank: int  # 1-based
    class_id: int
    probability: float
    correct: bool


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _loss_and_grads(
    w: np.ndarray, b: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    n = x.shape[0]
    # overflow on a diverging run is reported as Diverged by the caller,
    # not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        logits = x @ w.T + b
        zmax = logits.max(axis=1, keepdims=True)
        logsumexp = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
        loss = float(np.mean(logsumexp - logits[np.arange(n), y]))
        loss += 0.5 * l2 * float(np.sum(w * w))
        p = softmax(logits)
        p[np.arange(n), y] -= 1.0
        gw = p.T @ x / n + l2 * w
        gb = p.mean(axis=0)
    return loss, gw, gb


def train_gap_head(
    features: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    layer_name: str = "",
    n_classes: int | None = None,
) -> GapHead:
    """Fit a softmax head on [n_images, n_channels] GAP features."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"features {x.shape} vs labels {y.shape}")
    if not np.isfinite(x).all():
        raise NonFiniteInput("features contain NaN or Inf")
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("need at least 2 distinct classes")
    k = n_classes if n_classes is not None else int(y.max()) + 1
    if y.min() < 0 or y.max() >= k:
        raise BadClass(f"labels outside 0..{k - 1}")

    w = np.zeros((k, x.shape[1]))
    b = np.zeros(k)
    history = np.empty(cfg.max_iters + 1)
    iterations = 0
    loss, gw, gb = _loss_and_grads(w, b, x, y, cfg.l2)
    for it in range(cfg.max_iters):
        history[it] = loss
        if not np.isfinite(loss):
            raise Diverged(f"loss became non-finite at iteration {it}")
        gnorm = max(float(np.abs(gw).max()), float(np.abs(gb).max()))
        if gnorm <= cfg.grad_tol:
            break
        w -= cfg.learning_rate * gw
        b -= cfg.learning_rate * gb
        iterations = it + 1
        loss, gw, gb = _loss_and_grads(w, b, x, y, cfg.l2)
    history[iterations] = loss
    if not np.isfinite(loss):
        raise Diverged(f"loss became non-finite at iteration {iterations}")
    gnorm = max(float(np.abs(gw).max()), float(np.abs(gb).max()))
    meta = TrainMeta(iterations=iterations, final_loss=loss, final_grad_norm=gnorm)
    return GapHead(layer_name, w, b, meta, loss_history=history[: iterations + 1].copy())


def predict(head: GapHead, gap_features: np.ndarray, k: int = 5) -> list[tuple[int, float]]:
    """Top-k (class_id, probability), probability descending, ties by class id."""
    f = np.asarray(gap_features, dtype=np.float64).ravel()
    if f.shape[0] != head.n_channels:
        raise ShapeMismatch(f"features {f.shape} vs head channels {head.n_channels}")
    logits = head.w @ f + head.b
    probs = softmax(logits)
    order = sorted(range(head.n_classes), key=lambda c: (-probs[c], c))
    return [(c, float(probs[c])) for c in order[: min(k, head.n_classes)]]


def cam_map(fmap: np.ndarray, head: GapHead, class_id: int, image_id: str = "") -> CamMap:
    """Project the class's head weights back onto the feature maps."""
    fmap = np.asarray(fmap)
    if fmap.ndim != 3:
        raise ShapeMismatch(f"feature map must be [C,H,W], got {fmap.shape}")
    if fmap.shape[0] != head.n_channels:
        raise ShapeMismatch(f"map channels {fmap.shape[0]} vs head channels {head.n_channels}")
    if not (0 <= class_id < head.n_classes):
        raise BadClass(f"class {class_id} outside 0..{head.n_classes - 1}")
    grid = np.einsum("k,kyx->yx", head.w[class_id], fmap.astype(np.float64))
    return CamMap(image_id, head.layer_name, class_id, grid)


def upsample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resampling.

    Output (y,x) samples source (y*(H-1)/(out_h-1), x*(W-1)/(out_w-1)); a
    singleton output or source axis replicates the single row/column.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise ShapeMismatch(f"grid must be nonempty [H,W], got {grid.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"output dims must be >= 1, got {out_h}x{out_w}")
    h, w = grid.shape

    def axis_coords(out_n: int, src_n: int) -> np.ndarray:
        if out_n == 1 or src_n == 1:
            return np.zeros(out_n)
        return np.arange(out_n) * ((src_n - 1) / (out_n - 1))

    sy = axis_coords(out_h, h)
    sx = axis_coords(out_w, w)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[:, None]
    wx = (sx - x0)[None, :]

    top = grid[np.ix_(y0, x0)] * (1.0 - wx) + grid[np.ix_(y0, x1)] * wx
    bot = grid[np.ix_(y1, x0)] * (1.0 - wx) + grid[np.ix_(y1, x1)] * wx
    out = top * (1.0 - wy) + bot * wy
    # clamp float residue so interpolation never leaves the source range
    return np.clip(out, grid.min(), grid.max())


def per_layer_predictions(
    traces: Iterable[ForwardTrace],
    heads: dict[str, GapHead],
    manifest: DatasetManifest,
    k: int = 5,
) -> list[PredictionRow]:
    """GAP + predict at every tap layer, flagged against the manifest label."""
    rows: list[PredictionRow] = []
    for trace in traces:
        true_class = manifest.class_of(trace.image_id)
        for layer_name, fmap in trace.taps.items():
            head = heads.get(layer_name)
            if head is None:
                raise MissingHead(f"no head for tap layer {layer_name!r}")
            preds = predict(head, gap(fmap), k)
            for rank, (class_id, prob) in enumerate(preds, start=1):
                rows.append(
                    PredictionRow(
                        trace.image_id, layer_name, rank, class_id, prob, class_id == true_class
                    )
                )
    return rows


def top1_confidences(
    traces: Iterable[ForwardTrace], head: GapHead, layer: str, manifest: DatasetManifest
) -> dict[str, float]:
    """Softmax probability of each image's ground-truth class at one layer."""
    out: dict[str, float] = {}
    for trace in traces:
        if layer not in trace.taps:
            raise MissingHead(f"trace {trace.image_id} has no tap {layer!r}")
        f = gap(trace.taps[layer])
        probs = softmax(head.w @ np.asarray(f, dtype=np.float64) + head.b)
        out[trace.image_id] = float(probs[manifest.class_of(trace.image_id)])
    return out


# persistence: w/b as RSTF + text sidecar with the training metadata


def save_head(head: GapHead, out_dir: str | os.PathLike) -> None:
    stem = os.path.join(os.fspath(out_dir), f"head_{head.layer_name}")
    tensorio.write_tensor(head.w.astype(np.float32), f"{stem}_w.rstf")
    tensorio.write_tensor(head.b.astype(np.float32), f"{stem}_b.rstf")
    m = head.train_meta
    try:
        with open(f"{stem}_meta.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("layer_name\titerations\tfinal_loss\tfinal_grad_norm\n")
            fh.write(f"{head.layer_name}\t{m.iterations}\t{m.final_loss!r}\t{m.final_grad_norm!r}\n")
    except OSError as exc:
        raise IoError(f"cannot write {stem}_meta.tsv: {exc}") from exc


def load_head(out_dir: str | os.PathLike, layer_name: str) -> GapHead:
    stem = os.path.join(os.fspath(out_dir), f"head_{layer_name}")
    for suffix in ("_w.rstf", "_b.rstf", "_meta.tsv"):
        if not os.path.exists(stem + suffix):
            raise MissingHead(f"no trained head for layer {layer_name!r} in {out_dir}")
    w = tensorio.read_tensor(f"{stem}_w.rstf").astype(np.float64)
    b = tensorio.read_tensor(f"{stem}_b.rstf").astype(np.float64)
    try:
        with open(f"{stem}_meta.tsv", "r", encoding="utf-8") as fh:
            next(fh)
            _, iters, loss, gnorm = fh.readline().rstrip("\n").split("\t")
    except OSError as exc:
        raise IoError(f"cannot read {stem}_meta.tsv: {exc}") from exc
    meta = TrainMeta(int(iters), float(loss), float(gnorm))
    return GapHead(layer_name, w, b, meta)
