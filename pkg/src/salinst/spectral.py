"""Deep-feature spectral clustering of salient superpixels into instances.

The affinity between two superpixels divides a feature-distance kernel
exp(-||c_i - c_j|| / sigma^2) by a spatial penalty (1 + lambda * ||d_i - d_j||),
both norms unsquared and spatial centroids normalized to [0, 1]. Nodes are
embedded through the k smallest eigenvectors of the symmetric normalized
Laplacian (full cyclic-Jacobi eigendecomposition, deterministic sign
convention), rows unit-normalized, then clustered by Lloyd k-means whose
initial centers sit at evenly spaced fractile positions of the sorted
embedding instead of random draws. The whole path is RNG-free, so repeated
runs are bitwise identical.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .slic import SuperpixelPartition, superpixel_means

log = logging.getLogger(__name__)


class InstanceCountError(ValueError):
    """Requested more clusters than there are salient superpixels."""

    def __init__(self, requested: int, feasible: int):
        super().__init__(
            f"requested {requested} instances but only {feasible} salient superpixels exist"
        )
        self.requested = requested
        self.feasible = feasible


@dataclass(frozen=True)
class SpectralParams:
    """Spatial weight, affinity bandwidth, and the instance count k."""

    lam: float = 3.0
    sigma2: float = 10.0
    k: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be strictly positive")
        if self.k < 1:
            raise ValueError("cluster count must be at least 1")


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric affinity matrix with unit diagonal plus its degree vector."""

    w: np.ndarray
    degrees: np.ndarray


@dataclass(frozen=True)
class SpectralEmbedding:
    """Columns of u are eigenvectors of the k smallest eigenvalues (ascending)."""

    u: np.ndarray
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class InstanceSegmentation:
    """Per-pixel instance labels (0 = background) and mean saliency per instance."""

    labels: np.ndarray
    confidences: np.ndarray


def build_affinity(
    centroids: np.ndarray, positions: np.ndarray, params: SpectralParams
) -> AffinityGraph:
    """Affinity w_ij = exp(-||c_i - c_j|| / sigma2) / (1 + lam * ||d_i - d_j||).

    Exactly symmetric with unit diagonal; entries lie in (0, 1].
    """
    c = np.asarray(centroids, dtype=np.float64)
    d = np.asarray(positions, dtype=np.float64)
    if c.ndim != 2 or d.ndim != 2 or d.shape[1] != 2 or c.shape[0] != d.shape[0]:
        raise ValueError("need (n, c) feature rows and matching (n, 2) positions")
    if c.shape[0] < 1:
        raise ValueError("affinity graph needs at least one node")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(d))):
        raise ValueError("feature and position rows must be finite")

    fdist = _pairwise_euclidean(c)
    sdist = _pairwise_euclidean(d)
    w = np.exp(-fdist / params.sigma2) / (1.0 + params.lam * sdist)
    w = np.triu(w, 1)
    w = w + w.T
    np.fill_diagonal(w, 1.0)
    return AffinityGraph(w=w, degrees=w.sum(axis=1))


def _pairwise_euclidean(rows: np.ndarray) -> np.ndarray:
    if rows.shape[1] == 0:
        return np.zeros((rows.shape[0], rows.shape[0]))
    sq = (rows**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * rows @ rows.T
    return np.sqrt(np.maximum(d2, 0.0))


def normalized_laplacian(graph: AffinityGraph) -> np.ndarray:
    """Symmetric normalized Laplacian I - D^{-1/2} W D^{-1/2}."""
    deg = np.asarray(graph.degrees, dtype=np.float64)
    if np.any(deg <= 0):
        raise ValueError("degrees must be strictly positive")
    dinv = 1.0 / np.sqrt(deg)
    lap = -(dinv[:, None] * graph.w * dinv[None, :])
    lap = np.triu(lap, 1)
    lap = lap + lap.T
    np.fill_diagonal(lap, 1.0 - np.diag(graph.w) * dinv * dinv)
    return lap


def smallest_k_eigenvectors(
    m: np.ndarray, k: int, tol: float = 1e-13, max_sweeps: int = 60
) -> SpectralEmbedding:
    """Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run until every off-diagonal entry falls below tol * scale. The
    k smallest eigenvalues (stable ascending order) are returned with their
    eigenvectors, each column signed so its largest-magnitude entry is
    positive.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    n = a.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
        raise ValueError("matrix is not symmetric within 1e-12")

    a = (a + a.T) / 2.0
    v = np.eye(n)
    scale = max(1.0, float(np.max(np.abs(a))))
    stop = tol * scale

    for _ in range(max_sweeps):
        off = float(np.max(np.abs(np.triu(a, 1)), initial=0.0))
        if off <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= stop:
                    continue
                app, aqq = a[p, p], a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                cos = 1.0 / math.sqrt(t * t + 1.0)
                sin = t * cos
                tau = sin / (1.0 + cos)

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                new_p = col_p - sin * (col_q + tau * col_p)
                new_q = col_q + sin * (col_p - tau * col_q)
                new_p[p] = app - t * apq
                new_p[q] = 0.0
                new_q[q] = aqq + t * apq
                new_q[p] = 0.0
                a[:, p] = new_p
                a[p, :] = new_p
                a[:, q] = new_q
                a[q, :] = new_q

                vp = v[:, p].copy()
                v[:, p] = cos * vp - sin * v[:, q]
                v[:, q] = sin * vp + cos * v[:, q]
    else:
        raise ArithmeticError("Jacobi eigendecomposition did not converge")

    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals, kind="stable")[:k]
    vals = eigvals[order]
    vecs = v[:, order].copy()
    for j in range(vecs.shape[1]):
        lead = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[lead, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return SpectralEmbedding(u=vecs, eigenvalues=vals)


def fractile_percentages(k: int) -> np.ndarray:
    """Evenly spaced fractile positions 50/k + (i-1) * 100/k, i = 1..k."""
    if k < 1:
        raise ValueError("k must be at least 1")
    i = np.arange(1, k + 1, dtype=np.float64)
    return 50.0 / k + (i - 1.0) * 100.0 / k


def quantile_init(u: np.ndarray, k: int) -> np.ndarray:
    """Initial k-means centers at fractile positions of the sorted embedding.

    Rows are ordered ascending by first-column value (ties by row index);
    center i sits at sorted position floor(fraction_i * n), clamped.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"embedding must be 2-D, got shape {u.shape}")
    n = u.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")
    order = np.argsort(u[:, 0], kind="stable")
    positions = np.floor(fractile_percentages(k) / 100.0 * n).astype(np.int64)
    positions = np.clip(positions, 0, n - 1)
    return u[order[positions]].copy()


def _contiguous_blocks_1d(x: np.ndarray, k: int) -> np.ndarray:
    """Exact minimum-WCSS partition of 1-D data into k nonempty clusters.

    Optimal 1-D clusters are contiguous in sorted order, so dynamic
    programming over split points finds the global optimum in O(k n^2).
    Returns the block index (ascending by value) of every input point.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = xs.size
    s = np.concatenate([[0.0], np.cumsum(xs)])
    s2 = np.concatenate([[0.0], np.cumsum(xs**2)])

    def cost(i: int, j: int) -> float:  # inclusive range of sorted indices
        cnt = j - i + 1
        seg = s[j + 1] - s[i]
        return s2[j + 1] - s2[i] - seg * seg / cnt

    best = np.full((k + 1, n + 1), np.inf)
    split = np.zeros((k + 1, n + 1), dtype=np.int64)
    best[0, 0] = 0.0
    for m in range(1, k + 1):
        for j in range(m, n - (k - m) + 1):
            for t in range(m - 1, j):
                cand = best[m - 1, t] + cost(t, j - 1)
                if cand < best[m, j]:
                    best[m, j] = cand
                    split[m, j] = t
    blocks = np.empty(n, dtype=np.int64)
    j = n
    for m in range(k, 0, -1):
        t = split[m, j]
        blocks[t:j] = m - 1
        j = t
    labels = np.empty(n, dtype=np.int64)
    labels[order] = blocks
    return labels


def _wcss(u: np.ndarray, labels: np.ndarray, k: int) -> float:
    total = 0.0
    for j in range(k):
        members = u[labels == j]
        if members.shape[0]:
            total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def kmeans(u: np.ndarray, centers: np.ndarray, max_iters: int = 100) -> np.ndarray:
    """Cluster rows starting from the given centers; returns a label per row.

    Lloyd iterations with Euclidean distance; ties assign to the lowest
    center index. Duplicate initial centers are perturbed by 1e-9 of the
    per-column range. An emptied cluster is re-seeded to the point farthest
    from its currently assigned center (each point used at most once per
    pass), keeping every cluster populated. One-dimensional data is
    additionally solved exactly (optimal 1-D clusters are contiguous in
    sorted order); when the exact partition beats the Lloyd fixpoint it is
    returned instead, with blocks mapped onto the nearest final centers.
    """
    u = np.asarray(u, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != u.shape[1]:
        raise ValueError("centers must be (k, dim) matching the data")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    k = centers.shape[0]

    col_range = u.max(axis=0) - u.min(axis=0) if u.size else np.zeros(centers.shape[1])
    seen: dict[bytes, int] = {}
    for j in range(k):
        key = centers[j].tobytes()
        while key in seen:
            seen[key] += 1
            bumped = centers[j] + seen[key] * 1e-9 * col_range
            if bumped.tobytes() == key:  # zero column range, nothing to perturb with
                break
            centers[j] = bumped
            key = centers[j].tobytes()
        seen.setdefault(key, 0)

    labels = None
    for _ in range(max_iters):
        d2 = ((u[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)

        counts = np.bincount(new_labels, minlength=k)
        if np.any(counts == 0):
            own = d2[np.arange(u.shape[0]), new_labels]
            candidates = np.argsort(-own, kind="stable")
            used: set[int] = set()
            for j in np.flatnonzero(counts == 0):
                pick = next((int(c) for c in candidates if int(c) not in used), None)
                if pick is None:
                    break
                used.add(pick)
                centers[j] = u[pick]
            d2 = ((u[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(d2, axis=1)
            counts = np.bincount(new_labels, minlength=k)

        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = u[labels == j]
            if members.shape[0]:
                centers[j] = members.mean(axis=0)

    if u.shape[1] == 1 and u.shape[0] >= k:
        exact = _contiguous_blocks_1d(u[:, 0], k)
        lloyd_cost = _wcss(u, labels, k)
        exact_cost = _wcss(u, exact, k)
        if exact_cost <= lloyd_cost + 1e-12 * max(1.0, lloyd_cost):
            # renumber ascending blocks onto distinct nearest final centers
            means = np.array([u[exact == b, 0].mean() for b in range(k)])
            remap = np.empty(k, dtype=np.int64)
            taken: set[int] = set()
            for b in range(k):
                dist = np.abs(centers[:, 0] - means[b])
                choice = next(
                    int(j) for j in np.argsort(dist, kind="stable") if int(j) not in taken
                )
                taken.add(choice)
                remap[b] = choice
            labels = remap[exact]
    return labels


def cluster_instances(
    part: SuperpixelPartition,
    saliency: np.ndarray,
    features: np.ndarray,
    params: SpectralParams,
    saliency_threshold: float = 0.5,
    kmeans_iters: int = 100,
) -> InstanceSegmentation:
    """Split the salient region into k instances along superpixel boundaries.

    Superpixels containing at least one salient pixel form the affinity
    graph (feature means over their pixels, spatial centroids normalized to
    [0, 1]); the spectral embedding is row-normalized, seeded by fractiles,
    and clustered. Each superpixel's salient pixels take its cluster label;
    pixels under the threshold stay background. Instance ids are
    canonicalized so instance 1 owns the first salient pixel in raster
    order. Raises InstanceCountError when fewer salient superpixels than k
    exist; an empty salient region yields an all-background result and a
    warning.
    """
    saliency = np.asarray(saliency, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if saliency.shape != part.labels.shape:
        raise ValueError("saliency shape does not match the partition")
    if features.ndim != 3 or features.shape[:2] != part.labels.shape:
        raise ValueError("features must be (h, w, c) aligned with the partition")

    h, w = part.labels.shape
    salient = saliency >= saliency_threshold
    if not salient.any():
        log.warning("salient region is empty; returning all-background segmentation")
        return InstanceSegmentation(
            labels=np.zeros((h, w), dtype=np.int64), confidences=np.zeros(0)
        )

    node_ids = np.unique(part.labels[salient])
    if node_ids.size < params.k:
        raise InstanceCountError(params.k, int(node_ids.size))

    feature_means = superpixel_means(part, features)[node_ids]
    span_y = max(h - 1, 1)
    span_x = max(w - 1, 1)
    positions = part.centroids[node_ids][:, :2] / np.array([span_y, span_x], dtype=np.float64)

    graph = build_affinity(feature_means, positions, params)
    lap = normalized_laplacian(graph)
    embedding = smallest_k_eigenvectors(lap, params.k)

    rows = embedding.u.copy()
    norms = np.sqrt((rows**2).sum(axis=1))
    keep = norms > 1e-12
    rows[keep] = rows[keep] / norms[keep, None]

    centers = quantile_init(rows, params.k)
    assignment = kmeans(rows, centers, kmeans_iters)

    lut = np.zeros(part.n_superpixels, dtype=np.int64)
    lut[node_ids] = assignment + 1
    painted = lut[part.labels]
    painted[~salient] = 0

    flat = painted.ravel()
    first = np.full(params.k + 1, h * w, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(h * w))
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(params.k + 1, dtype=np.int64)
    remap[order + 1] = np.arange(1, params.k + 1)
    relabeled = remap[painted]

    confidences = np.zeros(params.k)
    for inst in range(1, params.k + 1):
        sel = relabeled == inst
        if sel.any():
            confidences[inst - 1] = saliency[sel].mean()
    return InstanceSegmentation(labels=relabeled, confidences=confidences)
