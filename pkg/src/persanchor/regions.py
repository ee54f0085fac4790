"""Perspective region division.

Objects are clustered by (aspect, scale); the vertical spread of each
cluster gives a pair of bounds, and the union of all bounds slices the
image into horizontal bands that later get their own anchors.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

MAX_ITER = 300
TOL = 1e-6
EDGE_TOL = 0.02
DEDUP_TOL = 0.005


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    silhouette: float = float("nan")
    inertia: float = float("nan")
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)
    scores: dict[int, float] = field(default_factory=dict)


def _sq_dist(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plus_plus_init(
    points: np.ndarray, k: int, rng: np.random.Generator, dist: Callable
) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    closest = dist(points, np.array(centers))[:, 0]
    for _ in range(1, k):
        weights = closest**2
        total = weights.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=weights / total)
        centers.append(points[idx])
        closest = np.minimum(closest, dist(points, points[idx][None, :])[:, 0])
    return np.array(centers, dtype=float)


def lloyd(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    *,
    distance: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    n_init: int = 4,
    max_iter: int = MAX_ITER,
    tol: float = TOL,
) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding and ``n_init`` restarts.

    ``distance(points, centroids)`` returns an ``(n, k)`` distance matrix;
    the default is Euclidean. Centroids are always updated as cluster
    means. The restart with the lowest objective (sum of squared
    distances) wins.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("expected a non-empty (n, d) array")
    if k < 1:
        raise ValueError("k must be at least 1")
    n_distinct = len(np.unique(points, axis=0))
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the number of distinct points ({n_distinct})")
    if distance is None:
        def distance(p, c):
            return np.sqrt(_sq_dist(p, c))

    rng = np.random.default_rng(seed)
    best: ClusterModel | None = None
    for _ in range(n_init):
        centroids = _plus_plus_init(points, k, rng, distance)
        history = []
        labels = np.zeros(len(points), dtype=int)
        n_iter = 0
        for n_iter in range(1, max_iter + 1):
            d = distance(points, centroids)
            labels = d.argmin(axis=1)
            history.append(float((d[np.arange(len(points)), labels] ** 2).sum()))
            new = centroids.copy()
            for j in range(k):
                members = points[labels == j]
                if len(members):
                    new[j] = members.mean(axis=0)
                else:
                    # Re-seed an empty cluster at the worst-served point.
                    far = d[np.arange(len(points)), labels].argmax()
                    new[j] = points[far]
            shift = float(np.abs(new - centroids).max())
            centroids = new
            if shift < tol:
                break
        d = distance(points, centroids)
        labels = d.argmin(axis=1)
        inertia = float((d[np.arange(len(points)), labels] ** 2).sum())
        history.append(inertia)
        if best is None or inertia < best.inertia:
            best = ClusterModel(
                k=k, centroids=centroids, assignments=labels, inertia=inertia,
                n_iter=n_iter, inertia_history=history,
            )
    assert best is not None
    return best


def _zscore(x: np.ndarray) -> np.ndarray:
    std = x.std(axis=0)
    std[std == 0] = 1.0
    return (x - x.mean(axis=0)) / std


def kmeans(
    features: Sequence[Sequence[float]] | np.ndarray,
    k: int,
    seed: int = 0,
    *,
    standardize: bool = False,
    n_init: int = 4,
) -> ClusterModel:
    """Euclidean K-means over (aspect, scale) features.

    With ``standardize`` the clustering runs on z-scored features, but the
    returned centroids are the per-cluster means in the original units.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D array")
    work = _zscore(x) if standardize else x
    model = lloyd(work, k, seed, n_init=n_init)
    if standardize:
        model.centroids = np.array([x[model.assignments == j].mean(axis=0) for j in range(k)])
    return model


def silhouette_score(
    x: np.ndarray,
    labels: np.ndarray,
    *,
    sample_size: int | None = None,
    seed: int = 0,
    chunk: int = 2048,
) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Points alone in their cluster score 0. When ``sample_size`` is given
    and smaller than the data, a seeded subsample is scored.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    if sample_size is not None and sample_size < len(x):
        idx = np.sort(np.random.default_rng(seed).choice(len(x), sample_size, replace=False))
        x, labels = x[idx], labels[idx]
    uniq, labels = np.unique(labels, return_inverse=True)
    k = len(uniq)
    if k < 2 or k >= len(x):
        raise ValueError("silhouette needs 2 <= n_clusters < n_samples")
    counts = np.bincount(labels, minlength=k).astype(float)
    onehot = np.zeros((len(x), k))
    onehot[np.arange(len(x)), labels] = 1.0
    scores = np.empty(len(x))
    for start in range(0, len(x), chunk):
        sl = slice(start, start + chunk)
        d = np.sqrt(np.maximum(_sq_dist(x[sl], x), 0.0))
        sums = d @ onehot
        own = labels[sl]
        rows = np.arange(len(own))
        own_n = counts[own]
        a = np.zeros(len(own))
        many = own_n > 1
        a[many] = sums[rows, own][many] / (own_n[many] - 1)
        means = sums / counts[None, :]
        means[rows, own] = np.inf
        b = means.min(axis=1)
        s = (b - a) / np.maximum(a, b)
        s[~many] = 0.0
        scores[sl] = s
    return float(scores.mean())


def select_k_by_silhouette(
    features: Sequence[Sequence[float]] | np.ndarray,
    k_range: Iterable[int] = range(2, 7),
    seed: int = 0,
    *,
    standardize: bool = False,
    sample_size: int | None = 5000,
) -> ClusterModel:
    """Fit K-means for each k and keep the model with the highest silhouette.

    Ties go to the smaller k. ``scores`` on the result maps every tried k
    to its silhouette.
    """
    x = np.asarray(features, dtype=float)
    ks = sorted(set(k_range))
    if not ks or ks[0] < 2:
        raise ValueError("k_range must contain values >= 2")
    scores: dict[int, float] = {}
    best: ClusterModel | None = None
    for k in ks:
        model = kmeans(x, k, seed, standardize=standardize)
        work = _zscore(x) if standardize else x
        model.silhouette = silhouette_score(work, model.assignments, sample_size=sample_size, seed=seed)
        scores[k] = model.silhouette
        if best is None or model.silhouette > best.silhouette:
            best = model
    assert best is not None
    best.scores = scores
    return best


def density_bounds(
    values: Sequence[float], mass: float = 0.99, edge_tol: float = EDGE_TOL
) -> tuple[float, float]:
    """Central interval holding ``mass`` of the values, tails split evenly.

    Quantiles interpolate linearly between order statistics. An upper
    bound within ``edge_tol`` of the image bottom snaps to 1.0.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values")
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must be in (0, 1)")
    tail = (1.0 - mass) / 2.0
    alpha, beta = (float(q) for q in np.quantile(v, [tail, 1.0 - tail]))
    if beta >= 1.0 - edge_tol:
        beta = 1.0
    return alpha, beta


@dataclass(frozen=True)
class RegionPartition:
    bounds: tuple[float, ...] = ()
    per_camera: Mapping[str, tuple[float, ...]] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        _check_bounds(self.bounds)
        if self.per_camera is not None:
            clean = {}
            for group, bounds in self.per_camera.items():
                clean[group] = tuple(float(b) for b in bounds)
                _check_bounds(clean[group])
            object.__setattr__(self, "per_camera", clean)

    @property
    def n_regions(self) -> int:
        return len(self.bounds) + 1

    def intervals(self) -> list[tuple[float, float]]:
        edges = (0.0, *self.bounds, 1.0)
        return list(zip(edges[:-1], edges[1:]))

    def for_camera(self, group: str) -> "RegionPartition":
        """Partition to use for one camera group, falling back to the shared one."""
        if group != "all" and self.per_camera and group in self.per_camera:
            return RegionPartition(self.per_camera[group])
        return RegionPartition(self.bounds)

    def to_dict(self) -> dict:
        out: dict = {"bounds": list(self.bounds)}
        if self.per_camera:
            out["per_camera"] = {g: list(b) for g, b in sorted(self.per_camera.items())}
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "RegionPartition":
        if "bounds" not in d:
            raise ValueError("partition is missing 'bounds'")
        return cls(tuple(d["bounds"]), d.get("per_camera") or None)

    @classmethod
    def load(cls, path) -> "RegionPartition":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _check_bounds(bounds: Sequence[float]) -> None:
    for b in bounds:
        if not 0.0 < b < 1.0:
            raise ValueError(f"partition bound {b} outside (0, 1)")
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise ValueError(f"partition bounds must be strictly increasing: {list(bounds)}")


def build_partition(
    cluster_bounds: Iterable[tuple[float, float]], tol: float = DEDUP_TOL
) -> RegionPartition:
    """Merge per-cluster (alpha, beta) pairs into one sorted set of cuts.

    Values within ``tol`` of an image edge or of a smaller cut are dropped.
    """
    values = sorted(v for pair in cluster_bounds for v in pair)
    cuts: list[float] = []
    for v in values:
        if v <= tol or v >= 1.0 - tol:
            continue
        if cuts and v - cuts[-1] <= tol:
            continue
        cuts.append(v)
    return RegionPartition(tuple(cuts))


def assign_region(p: RegionPartition, y_center_norm: float) -> int:
    """Index of the band ``[b_i, b_{i+1})`` holding ``y``; the last band is closed."""
    if not 0.0 <= y_center_norm <= 1.0:
        raise ValueError(f"normalized y {y_center_norm} outside [0, 1]")
    return bisect.bisect_right(p.bounds, y_center_norm)


@dataclass
class RegionStudy:
    model: ClusterModel
    cluster_bounds: list[tuple[float, float]]
    partition: RegionPartition
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.model.k,
            "silhouette": self.model.silhouette,
            "silhouette_by_k": {str(k): v for k, v in sorted(self.model.scores.items())},
            "centroids": [[float(a), float(s)] for a, s in self.model.centroids],
            "cluster_sizes": np.bincount(self.model.assignments, minlength=self.model.k).tolist(),
            "cluster_bounds": [list(b) for b in self.cluster_bounds],
            "partition": self.partition.to_dict(),
            "warnings": list(self.warnings),
        }


def divide_regions(
    features: np.ndarray,
    y_center_norm: Sequence[float],
    k_range: Iterable[int] = range(2, 7),
    seed: int = 0,
    *,
    mass: float = 0.99,
    standardize: bool = False,
    min_silhouette: float = 0.5,
    sample_size: int | None = 5000,
) -> RegionStudy:
    """Cluster (aspect, scale) features and turn cluster extents into bands.

    When even the best silhouette stays below ``min_silhouette`` the data
    has no usable cluster structure: the image is kept as a single region
    and a warning is recorded.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(y_center_norm, dtype=float)
    if len(x) != len(y):
        raise ValueError("features and positions differ in length")
    model = select_k_by_silhouette(
        x, k_range, seed, standardize=standardize, sample_size=sample_size
    )
    bounds = [density_bounds(y[model.assignments == j], mass) for j in range(model.k)]
    warnings = []
    if model.silhouette < min_silhouette:
        warnings.append(
            f"best silhouette {model.silhouette:.3f} (k={model.k}) is below "
            f"{min_silhouette}; no cluster structure, using a single region"
        )
        partition = RegionPartition()
    else:
        partition = build_partition(bounds)
        if partition.n_regions == 1:
            warnings.append("cluster extents coincide; partition has a single region")
    return RegionStudy(model, bounds, partition, warnings)
