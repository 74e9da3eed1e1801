"""Multidimensional k-means over per-cell signature matrices.

Each point is a whole (bins x categories) matrix; the metric is the
Euclidean norm of the elementwise difference, so clustering happens in the
flattened joint space. k is selected by the silhouette criterion over a
candidate range, and final labels follow the size-ordering convention:
the largest cluster is cluster 1.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import (
    DataError,
    KTooLargeError,
    NonFiniteError,
    ShapeMismatchError,
    SingleClusterError,
)
from .grid import CellId, GridSpec, cell_polygon
from .signatures import NormalizedTensor, SignatureTensor

TensorLike = Union[SignatureTensor, NormalizedTensor, np.ndarray]


@dataclass
class ClusterModel:
    """Fitted k-means model; labels are 1-based and size-ordered."""

    k: int
    centroids: np.ndarray  # (k, *feature_shape)
    labels: np.ndarray  # (n,), values in 1..k
    inertia: float
    seed: int
    n_iter: int
    converged: bool = True
    categories: tuple[str, ...] = ()
    inertia_trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.categories = tuple(self.categories)

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.centroids.shape[1:]

    def sizes(self) -> dict[int, int]:
        return {lab: int((self.labels == lab).sum()) for lab in range(1, self.k + 1)}


@dataclass
class KSelectionReport:
    """Silhouette scores per candidate k and the selected value."""

    scores: dict[int, float]
    inertias: dict[int, float]
    chosen_k: int
    tie_break_note: str = ""


def _as_points(data: TensorLike) -> np.ndarray:
    """Rows-as-points view: (n, r, c) stacks flatten to (n, r*c)."""
    if isinstance(data, (SignatureTensor, NormalizedTensor)):
        values = data.values
    else:
        values = np.asarray(data, dtype=np.float64)
    if values.ndim == 3:
        return values.reshape(values.shape[0], -1)
    if values.ndim == 2:
        return values
    raise ShapeMismatchError(f"expected a 2-D or 3-D point stack, got ndim={values.ndim}")


def _feature_shape(data: TensorLike) -> tuple[int, ...]:
    if isinstance(data, (SignatureTensor, NormalizedTensor)):
        return data.values.shape[1:]
    arr = np.asarray(data)
    return arr.shape[1:]


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean norm of the elementwise difference between two equal-shape matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def _pairwise_sq(X: np.ndarray, C: np.ndarray, block: int = 4096) -> np.ndarray:
    """Exact squared Euclidean distances between rows of X and rows of C."""
    out = np.empty((X.shape[0], C.shape[0]), dtype=np.float64)
    for start in range(0, X.shape[0], block):
        stop = min(start + block, X.shape[0])
        diff = X[start:stop, None, :] - C[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[int(rng.integers(n))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining mass is zero (duplicate points); any point will do
            idx = int(rng.integers(n))
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _relocate_empty(X, centers, labels, k):
    """Give each empty cluster the point farthest from its current centroid.

    The point is moved into the empty cluster immediately, which guarantees
    progress even when all points coincide. Deterministic: ties pick the
    lowest point index.
    """
    counts = np.bincount(labels, minlength=k)
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return labels, centers
    labels = labels.copy()
    centers = centers.copy()
    dist = ((X - centers[labels]) ** 2).sum(axis=1)
    moved = np.zeros(X.shape[0], dtype=bool)
    for e in empties:
        counts = np.bincount(labels, minlength=k)
        eligible = (~moved) & (counts[labels] > 1)
        if not eligible.any():
            eligible = ~moved
        candidates = np.flatnonzero(eligible)
        far = int(candidates[np.argmax(dist[candidates])])
        labels[far] = e
        centers[e] = X[far]
        moved[far] = True
        dist[far] = 0.0
    return labels, centers


def _means(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    out = np.empty((k, X.shape[1]), dtype=np.float64)
    for j in range(k):
        members = X[labels == j]
        out[j] = members.mean(axis=0)
    return out


def kmeans(
    data: TensorLike,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding, deterministic given the seed.

    Iteration stops when assignments repeat exactly or the maximum centroid
    shift drops below ``tol``; a final settling pass then guarantees that the
    returned labels are a fixed point of the returned centroids and that each
    centroid is the mean of its members. Output labels are size-ordered.
    """
    X = _as_points(data)
    n = X.shape[0]
    if not np.isfinite(X).all():
        raise NonFiniteError("clustering input contains non-finite values")
    if k > n:
        raise KTooLargeError(f"k={k} exceeds the number of points n={n}")
    if k < 2:
        raise ValueError("k must be at least 2")

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(X, k, rng)
    prev_labels = None
    labels = None
    converged = False
    n_iter = 0
    trace: list[float] = []
    for n_iter in range(1, max_iter + 1):
        d2 = _pairwise_sq(X, centers)
        labels = d2.argmin(axis=1)
        labels, centers = _relocate_empty(X, centers, labels, k)
        trace.append(float(((X - centers[labels]) ** 2).sum()))
        new_centers = _means(X, labels, k)
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        stable = prev_labels is not None and np.array_equal(labels, prev_labels)
        prev_labels = labels
        if stable or shift < tol:
            converged = True
            break

    # settle: lock the assignment fixed point against the final centroids
    for _ in range(max_iter):
        d2 = _pairwise_sq(X, centers)
        new_labels = d2.argmin(axis=1)
        new_labels, centers = _relocate_empty(X, centers, new_labels, k)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = _means(X, labels, k)
        n_iter += 1

    d2 = _pairwise_sq(X, centers)
    inertia = float(d2[np.arange(n), labels].sum())
    trace.append(inertia)
    model = ClusterModel(
        k=k,
        centroids=centers.reshape((k,) + _feature_shape(data)),
        labels=labels + 1,
        inertia=inertia,
        seed=seed,
        n_iter=n_iter,
        converged=converged,
        categories=getattr(data, "categories", ()),
        inertia_trace=trace,
    )
    return relabel_by_size(model)


def relabel_by_size(model: ClusterModel) -> ClusterModel:
    """Renumber clusters so sizes are non-increasing; the largest becomes 1.

    Equal sizes keep their old relative order. Centroids are permuted in
    step, so centroid i always belongs to cluster i. Idempotent.
    """
    sizes = model.sizes()
    order = sorted(range(1, model.k + 1), key=lambda lab: (-sizes[lab], lab))
    mapping = {old: new for new, old in enumerate(order, start=1)}
    new_labels = np.array([mapping[int(lab)] for lab in model.labels], dtype=np.int64)
    new_centroids = model.centroids[[old - 1 for old in order]]
    return ClusterModel(
        k=model.k,
        centroids=new_centroids,
        labels=new_labels,
        inertia=model.inertia,
        seed=model.seed,
        n_iter=model.n_iter,
        converged=model.converged,
        categories=model.categories,
        inertia_trace=list(model.inertia_trace),
    )


def silhouette(data: TensorLike, labels: Sequence[int]) -> float:
    """Mean silhouette score of a labeling under the Euclidean matrix metric.

    Per point: a is the mean distance to its own cluster (self excluded),
    b the smallest mean distance to any other cluster, and the score is
    (b - a) / max(a, b). Singleton points and points with a = b = 0 score 0.
    Exact computation over the full pairwise matrix, so memory grows as n^2.
    """
    X = _as_points(data)
    labels = np.asarray(labels)
    if labels.shape[0] != X.shape[0]:
        raise ShapeMismatchError("labels length does not match number of points")
    uniq, lab_idx = np.unique(labels, return_inverse=True)
    n_clusters = uniq.size
    if n_clusters < 2:
        raise SingleClusterError("silhouette needs at least two distinct clusters")
    n = X.shape[0]
    dist = np.sqrt(np.maximum(_pairwise_sq(X, X), 0.0))
    onehot = np.zeros((n, n_clusters), dtype=np.float64)
    onehot[np.arange(n), lab_idx] = 1.0
    sums = dist @ onehot  # (n, n_clusters): total distance to each cluster
    counts = onehot.sum(axis=0)

    own_count = counts[lab_idx]
    own_sum = sums[np.arange(n), lab_idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = own_sum / (own_count - 1)
    other = sums / counts[None, :]
    other[np.arange(n), lab_idx] = np.inf
    b = other.min(axis=1)

    scores = np.zeros(n, dtype=np.float64)
    regular = own_count > 1
    denom = np.maximum(a, b)
    valid = regular & (denom > 0)
    scores[valid] = (b[valid] - a[valid]) / denom[valid]
    return float(scores.mean())


def restart_seed(seed: int, k: int, restart: int) -> int:
    """Deterministic per-(k, restart) child seed used by select_k."""
    return int(np.random.SeedSequence((seed, k, restart)).generate_state(1)[0])


def select_k(
    data: TensorLike,
    k_min: int = 3,
    k_max: int = 10,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> tuple[ClusterModel, KSelectionReport]:
    """Try each k in [k_min, k_max], keep the best restart by inertia, and pick
    the k with the highest silhouette score (ties go to the smallest k)."""
    n = _as_points(data).shape[0]
    if k_min < 2 or k_min > k_max:
        raise ValueError("need 2 <= k_min <= k_max")
    if k_max > n:
        raise KTooLargeError(f"k_max={k_max} exceeds the number of points n={n}")
    scores: dict[int, float] = {}
    inertias: dict[int, float] = {}
    best_models: dict[int, ClusterModel] = {}
    for k in range(k_min, k_max + 1):
        best = None
        for r in range(restarts):
            model = kmeans(data, k, restart_seed(seed, k, r), max_iter=max_iter, tol=tol)
            if best is None or model.inertia < best.inertia:
                best = model
        best_models[k] = best
        inertias[k] = best.inertia
        scores[k] = silhouette(data, best.labels)
    top = max(scores.values())
    tied = [k for k in sorted(scores) if scores[k] == top]
    chosen = tied[0]
    note = ""
    if len(tied) > 1:
        note = f"silhouette tie between k={tied}; smallest k chosen"
    report = KSelectionReport(scores=scores, inertias=inertias, chosen_k=chosen, tie_break_note=note)
    return best_models[chosen], report


def assign(model: ClusterModel, matrix: np.ndarray) -> int:
    """Label of the nearest centroid; ties go to the smallest label."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != model.feature_shape:
        raise ShapeMismatchError(
            f"matrix shape {matrix.shape} does not match centroids {model.feature_shape}"
        )
    flat = model.centroids.reshape(model.k, -1)
    d2 = ((flat - matrix.reshape(-1)[None, :]) ** 2).sum(axis=1)
    return int(d2.argmin()) + 1


# ---------------------------------------------------------------------------
# Model files: magic, JSON header (k, seed, iteration record, labels, category
# order, centroid shape), then the float64 centroid payload.
# ---------------------------------------------------------------------------

_MODEL_MAGIC = b"VCLM"


def write_model(model: ClusterModel, path) -> None:
    header = {
        "version": 1,
        "k": model.k,
        "seed": model.seed,
        "n_iter": model.n_iter,
        "inertia": float(model.inertia),
        "converged": model.converged,
        "categories": list(model.categories),
        "centroid_shape": list(model.centroids.shape),
        "labels": [int(x) for x in model.labels],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.centroids, dtype=np.float64).tobytes())


def read_model(path) -> ClusterModel:
    raw = Path(path).read_bytes()
    if raw[:4] != _MODEL_MAGIC:
        raise DataError(f"{path} is not a cluster model file")
    (blob_len,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + blob_len].decode("utf-8"))
    shape = tuple(header["centroid_shape"])
    centroids = np.frombuffer(raw[8 + blob_len :], dtype=np.float64).reshape(shape)
    return ClusterModel(
        k=int(header["k"]),
        centroids=centroids.copy(),
        labels=np.asarray(header["labels"], dtype=np.int64),
        inertia=float(header["inertia"]),
        seed=int(header["seed"]),
        n_iter=int(header["n_iter"]),
        converged=bool(header["converged"]),
        categories=tuple(header["categories"]),
    )


def export_labels_csv(cells: Sequence[CellId], labels: Sequence[int], path) -> None:
    if len(cells) != len(labels):
        raise ShapeMismatchError("cells and labels differ in length")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("col,row,cluster\n")
        for cell, lab in zip(cells, labels):
            fh.write(f"{cell.col},{cell.row},{int(lab)}\n")


def export_labels_geojson(
    cells: Sequence[CellId], labels: Sequence[int], grid: GridSpec, path
) -> None:
    if len(cells) != len(labels):
        raise ShapeMismatchError("cells and labels differ in length")
    features = []
    for cell, lab in zip(cells, labels):
        ring = [[x, y] for x, y in cell_polygon(cell, grid)]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"col": cell.col, "row": cell.row, "cluster": int(lab)},
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")
