"""Selectivity and sparsity statistics over activity patterns.

"Activated" always means a nonzero entry in a thresholded ActivityPattern.
Count histograms use unit-width integer bins (one bin per possible count);
response histograms use uniform bins on [0,1], half-open except the final
bin which is closed so a response of exactly 1.0 is countable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import BadNeuron, EmptyScope
from .patterns import ActivityPattern, ResponseVector
from .tensorio import DatasetManifest


@dataclass
class Histogram:
    bin_edges: np.ndarray  # integer bin labels when integer_bins is set
    counts: np.ndarray
    total: int
    integer_bins: bool = False

    def __post_init__(self) -> None:
        self.bin_edges = np.asarray(self.bin_edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        expected = len(self.bin_edges) if self.integer_bins else len(self.bin_edges) - 1
        if len(self.counts) != expected:
            raise ValueError(f"{len(self.counts)} counts for {len(self.bin_edges)} edges")
        if int(self.counts.sum()) != self.total:
            raise ValueError(f"counts sum {self.counts.sum()} != total {self.total}")

    @property
    def ratios(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts / float(self.total)

    def rows(self) -> list[tuple[float, float, int, float]]:
        """(bin_lo, bin_hi, count, ratio) rows for tabular output."""
        out = []
        for i, c in enumerate(self.counts):
            if self.integer_bins:
                lo = hi = float(self.bin_edges[i])
            else:
                lo, hi = float(self.bin_edges[i]), float(self.bin_edges[i + 1])
            out.append((lo, hi, int(c), float(self.ratios[i])))
        return out


def _select(
    patterns: Iterable[ActivityPattern], layer: str, scope: int | None
) -> list[ActivityPattern]:
    picked = [
        p
        for p in patterns
        if p.layer_name == layer and (scope is None or p.class_id == scope)
    ]
    if not picked:
        raise EmptyScope(f"no patterns at layer {layer!r} with scope {scope!r}")
    return picked


def activated_per_image(
    patterns: Iterable[ActivityPattern], layer: str, scope: int | None = None
) -> Histogram:
    """Histogram of per-image activated-neuron counts, bins 0..n_channels."""
    picked = _select(patterns, layer, scope)
    n_channels = len(picked[0].values)
    counts_per_image = [int(np.count_nonzero(p.values)) for p in picked]
    bins = np.arange(n_channels + 1)
    hist = np.bincount(counts_per_image, minlength=n_channels + 1)
    return Histogram(bins, hist, total=len(picked), integer_bins=True)


def images_per_neuron(
    patterns: Iterable[ActivityPattern], layer: str, scope: int | None = None
) -> Histogram:
    """Histogram of per-neuron image counts, bins 0..n_images in scope."""
    picked = _select(patterns, layer, scope)
    stacked = np.stack([p.activated_mask for p in picked])
    per_neuron = stacked.sum(axis=0)
    bins = np.arange(len(picked) + 1)
    hist = np.bincount(per_neuron, minlength=len(picked) + 1)
    return Histogram(bins, hist, total=stacked.shape[1], integer_bins=True)


def neuron_response_histogram(
    vectors: Iterable[ResponseVector],
    neuron: int,
    class_id: int,
    layer: str,
    manifest: DatasetManifest,
    n_bins: int = 50,
) -> Histogram:
    """Distribution of one neuron's responses over a class's images.

    Uniform bins on [0,1]; ratios (counts/total) sum to 1.
    """
    picked = [
        v
        for v in vectors
        if v.layer_name == layer and manifest.class_of(v.image_id) == class_id
    ]
    if not picked:
        raise EmptyScope(f"class {class_id} has no images at layer {layer!r}")
    n_channels = len(picked[0].values)
    if not (0 <= neuron < n_channels):
        raise BadNeuron(f"neuron {neuron} outside 0..{n_channels - 1}")

    values = np.array([v.values[neuron] for v in picked])
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # np.histogram bins are half-open with a closed final bin, which is
    # exactly the convention here: a response of 1.0 lands in the last bin
    hist, _ = np.histogram(values, bins=edges)
    return Histogram(edges, hist, total=len(picked))
