"""Representational dissimilarity matrices and their geometry.

An RDM entry is 1 minus the Pearson correlation between two activity
patterns, so identical patterns sit at 0 and perfectly anticorrelated ones
at 2. Constant (zero-variance) patterns cannot be correlated; their pairs
are assigned the uncorrelated value 1 and listed in the RDM's degeneracy
report instead of failing whole-dataset runs.

RDM-level comparisons (rank transform for display, inter-RDM correlation,
classical MDS of the RDM-of-RDMs distances) all run on the vectorized
upper triangle. MDS uses Torgerson double-centering with a cyclic Jacobi
eigensolver: deterministic, full-spectrum, and exact enough at the matrix
sizes involved here.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .errors import (
    BadDistanceMatrix,
    ClassTooSmall,
    DegenerateRdm,
    IoError,
    LabelMismatch,
    LayerMismatch,
    ManifestMismatch,
    ShapeMismatch,
    TooFewPatterns,
    ZeroVariance,
)
from .patterns import ActivityPattern
from .tensorio import DatasetManifest

RAW = "raw"
RANK = "rank"

PEARSON = "pearson"
SPEARMAN = "spearman"


@dataclass
class Rdm:
    labels: list[tuple[str, int]]  # (image_id, class_id) per row
    d: np.ndarray
    mode: str = RAW
    degeneracies: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.d = np.asarray(self.d, dtype=np.float64)
        n = len(self.labels)
        if self.d.shape != (n, n):
            raise ShapeMismatch(f"RDM is {self.d.shape} for {n} labels")
        if not np.array_equal(self.d, self.d.T):
            raise BadDistanceMatrix("RDM is not symmetric")
        if np.any(np.diag(self.d) != 0.0):
            raise BadDistanceMatrix("RDM diagonal must be exactly 0")
        hi = 2.0 if self.mode == RAW else 1.0
        if self.d.size and (self.d.min() < 0.0 or self.d.max() > hi + 1e-9):
            raise BadDistanceMatrix(f"{self.mode} RDM entries outside [0,{hi}]")

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass
class SubsetSpec:
    subset_index: int  # 1-based
    members: list[str]  # image_ids, class-major order


@dataclass
class MdsEmbedding:
    labels: list
    coords: np.ndarray  # [n, dim]
    eigenvalues: np.ndarray  # all n, descending


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson's r, clamped to [-1,1] against floating-point drift."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ShapeMismatch(f"pearson needs two equal vectors of length >= 2, got {a.size}/{b.size}")
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        raise ZeroVariance("constant vector has no correlation")
    r = float(da @ db) / math.sqrt(va * vb)
    return min(1.0, max(-1.0, r))


def build_rdm(patterns: list[ActivityPattern]) -> Rdm:
    """Pairwise 1 - r over activity patterns; degenerate pairs get d = 1."""
    if len(patterns) < 2:
        raise TooFewPatterns(f"need >= 2 patterns, got {len(patterns)}")
    layer = patterns[0].layer_name
    width = len(patterns[0].values)
    for p in patterns[1:]:
        if p.layer_name != layer:
            raise LayerMismatch(f"patterns mix layers {layer!r} and {p.layer_name!r}")
        if len(p.values) != width:
            raise ShapeMismatch("patterns have unequal vector lengths")

    n = len(patterns)
    d = np.zeros((n, n))
    degeneracies: list[tuple[int, int]] = []
    for i in range(n):
        for j in range(i + 1, n):
            try:
                dij = 1.0 - pearson(patterns[i].values, patterns[j].values)
            except ZeroVariance:
                dij = 1.0
                degeneracies.append((i, j))
            d[i, j] = dij
            d[j, i] = dij
    labels = [(p.image_id, p.class_id) for p in patterns]
    return Rdm(labels, d, RAW, degeneracies)


def _average_ranks(vals: np.ndarray) -> np.ndarray:
    """Ranks 1..m with ties averaged."""
    m = vals.size
    order = np.argsort(vals, kind="stable")
    ranks = np.empty(m, dtype=np.float64)
    i = 0
    sv = vals[order]
    while i < m:
        j = i
        while j + 1 < m and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _upper(d: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(d.shape[0], k=1)
    return d[iu]


def rank_transform(r: Rdm) -> Rdm:
    """Replace off-diagonal entries by average-tie ranks scaled into [0,1]."""
    if r.mode != RAW:
        raise ValueError("rank_transform expects a raw-mode RDM")
    n = r.n
    vals = _upper(r.d)
    m = vals.size
    if m == 1:
        scaled = np.array([0.5])
    else:
        scaled = (_average_ranks(vals) - 1.0) / (m - 1.0)
    out = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    out[iu] = scaled
    out[(iu[1], iu[0])] = scaled
    return Rdm(list(r.labels), out, RANK, list(r.degeneracies))


def build_subsets(
    manifest: DatasetManifest,
    confidences: dict[str, float],
    n_groups: int = 12,
    per_group: int = 12,
    allow_short: bool = False,
) -> list[SubsetSpec]:
    """Accuracy-sorted subset construction.

    Per class: sort images by confidence descending (ties by image_id),
    split into n_groups contiguous groups as equal as possible (earlier
    groups take the remainder), then subset s collects the first per_group
    members of group s from every class, classes in ascending id order.
    """
    for r in manifest.records:
        if r.image_id not in confidences:
            raise ManifestMismatch(f"no confidence for image {r.image_id!r}")

    by_class: dict[int, list[str]] = {}
    for r in manifest.records:
        by_class.setdefault(r.class_id, []).append(r.image_id)

    grouped: dict[int, list[list[str]]] = {}
    for class_id in sorted(by_class):
        ids = sorted(by_class[class_id], key=lambda i: (-confidences[i], i))
        if len(ids) < n_groups * per_group and not allow_short:
            raise ClassTooSmall(
                f"class {class_id} has {len(ids)} images, needs {n_groups * per_group}"
            )
        base, rem = divmod(len(ids), n_groups)
        groups: list[list[str]] = []
        start = 0
        for g in range(n_groups):
            size = base + (1 if g < rem else 0)
            groups.append(ids[start : start + size])
            start += size
        grouped[class_id] = groups

    subsets: list[SubsetSpec] = []
    for s in range(n_groups):
        members: list[str] = []
        for class_id in sorted(grouped):
            members.extend(grouped[class_id][s][:per_group])
        subsets.append(SubsetSpec(subset_index=s + 1, members=members))
    return subsets


def rdm_correlation(a: Rdm, b: Rdm, method: str = PEARSON) -> float:
    """Correlation of two RDMs over their vectorized upper triangles."""
    if a.labels != b.labels:
        raise LabelMismatch("RDMs carry different label lists")
    va = _upper(a.d)
    vb = _upper(b.d)
    if method == SPEARMAN:
        va = _average_ranks(va)
        vb = _average_ranks(vb)
    elif method != PEARSON:
        raise ValueError(f"unknown method {method!r}")
    try:
        return pearson(va, vb)
    except ZeroVariance as exc:
        raise DegenerateRdm("constant off-diagonal entries") from exc


def rdm_distance_matrix(rdms: list[Rdm], method: str = PEARSON) -> np.ndarray:
    """D[p][q] = 1 - correlation(rdm_p, rdm_q); symmetric with zero diagonal."""
    n = len(rdms)
    out = np.zeros((n, n))
    for p in range(n):
        for q in range(p + 1, n):
            d = 1.0 - rdm_correlation(rdms[p], rdms[q], method)
            out[p, q] = d
            out[q, p] = d
    return out


def _jacobi_eigh(
    a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi diagonalization of a symmetric matrix.

    Returns (eigenvalues, eigenvectors as columns), unsorted. Sweeps stop
    when the off-diagonal Frobenius norm drops to tol.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, k=1) ** 2)))
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                cp = a[:, p].copy()
                cq = a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def classical_mds(D: np.ndarray, dim: int = 2, labels: list | None = None) -> MdsEmbedding:
    """Torgerson scaling: double-center the squared distances and embed on
    the top eigenvectors.

    Column k of the coordinates is eigvec_k * sqrt(max(eigval_k, 0)), with
    the sign flipped so each column's largest-magnitude entry is
    nonnegative (ties broken by lowest index).
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise BadDistanceMatrix(f"distance matrix must be square, got {D.shape}")
    n = D.shape[0]
    if n < 2:
        raise BadDistanceMatrix("need at least 2 points")
    if not np.array_equal(D, D.T):
        raise BadDistanceMatrix("distance matrix is not symmetric")
    if D.min() < 0.0:
        raise BadDistanceMatrix("distance matrix has negative entries")
    if np.any(np.diag(D) != 0.0):
        raise BadDistanceMatrix("distance matrix diagonal must be 0")
    if not (1 <= dim <= n - 1):
        raise ValueError(f"dim must be in 1..{n - 1}, got {dim}")

    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ (D * D) @ j
    b = (b + b.T) / 2.0  # kill float asymmetry before the two-sided solver

    evals, evecs = _jacobi_eigh(b)
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]

    coords = np.zeros((n, dim))
    for k in range(dim):
        col = evecs[:, k] * math.sqrt(max(evals[k], 0.0))
        pivot = int(np.argmax(np.abs(col)))  # argmax takes the lowest index on ties
        if col[pivot] < 0.0:
            col = -col
        coords[:, k] = col

    if labels is None:
        labels = list(range(n))
    return MdsEmbedding(labels=list(labels), coords=coords, eigenvalues=evals)


def embedding_distances(e: MdsEmbedding) -> np.ndarray:
    diff = e.coords[:, None, :] - e.coords[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def mds_fit_correlation(D: np.ndarray, e: MdsEmbedding, method: str = PEARSON) -> float:
    """Correlation between original dissimilarities and embedded distances."""
    D = np.asarray(D, dtype=np.float64)
    dist = embedding_distances(e)
    if D.shape != dist.shape:
        raise LabelMismatch(f"matrix {D.shape} vs embedding for {dist.shape[0]} points")
    va = _upper(D)
    vb = _upper(dist)
    if method == SPEARMAN:
        va = _average_ranks(va)
        vb = _average_ranks(vb)
    elif method != PEARSON:
        raise ValueError(f"unknown method {method!r}")
    return pearson(va, vb)


# persistence: RSTF matrix + label sidecar


def save_rdm(r: Rdm, path: str | os.PathLike) -> None:
    """Write <path> as an [n,n] RSTF tensor and <path>.labels.tsv beside it."""
    tensorio.write_tensor(r.d.astype(np.float32), path)
    try:
        with open(f"{os.fspath(path)}.labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# mode\t{r.mode}\n")
            fh.write("row\timage_id\tclass_id\n")
            for i, (image_id, class_id) in enumerate(r.labels):
                fh.write(f"{i}\t{image_id}\t{class_id}\n")
    except OSError as exc:
        raise IoError(f"cannot write labels for {path}: {exc}") from exc


def load_rdm(path: str | os.PathLike) -> Rdm:
    d = tensorio.read_tensor(path).astype(np.float64)
    labels: list[tuple[str, int]] = []
    mode = RAW
    try:
        with open(f"{os.fspath(path)}.labels.tsv", "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("# mode\t"):
                    mode = line.split("\t")[1]
                    continue
                if line.startswith("row\t") or not line:
                    continue
                _, image_id, class_id = line.split("\t")
                labels.append((image_id, int(class_id)))
    except OSError as exc:
        raise IoError(f"cannot read labels for {path}: {exc}") from exc
    # float32 storage can nudge the diagonal; restore the exact invariants
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return Rdm(labels, d, mode)
