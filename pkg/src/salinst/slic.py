"""Deterministic SLIC superpixels and per-superpixel feature aggregation.

Grid-seeded localized k-means in (L, a, b, y, x) space, no RNG anywhere:
seeds sit on a regular grid, get nudged to the lowest-gradient pixel in a
3x3 neighborhood, and iterate a fixed number of Lloyd updates with the
search window limited to 2S around each center. A connectivity pass then
absorbs orphan fragments into their largest neighbor so every superpixel
is 4-connected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# sRGB (D65) to XYZ; the white point is taken as the row sums so that
# RGB (1,1,1) lands exactly on L=100, a=b=0.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE = _RGB_TO_XYZ.sum(axis=1)


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB in [0, 1] to CIELAB (D65); L in [0, 100]."""
    rgb = np.asarray(img, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) RGB tensor, got shape {rgb.shape}")
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


@dataclass(frozen=True)
class SuperpixelPartition:
    """Labeling of the pixel grid into 4-connected superpixels.

    labels holds values in [0, n_superpixels); centroids rows are
    (y, x, L, a, b) means per superpixel; sizes are pixel counts and sum
    to h*w.
    """

    labels: np.ndarray
    n_superpixels: int
    centroids: np.ndarray
    sizes: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def _gradient(lab: np.ndarray) -> np.ndarray:
    # squared Lab difference of horizontal plus vertical neighbors, edges replicated
    padded = np.pad(lab, ((1, 1), (1, 1), (0, 0)), mode="edge")
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    return (dy**2).sum(axis=2) + (dx**2).sum(axis=2)


def _seed_positions(h: int, w: int, n: int) -> tuple[np.ndarray, np.ndarray, int, int]:
    n_rows = max(1, round(math.sqrt(n * h / w)))
    n_cols = max(1, round(n / n_rows))
    sy = (np.arange(n_rows) + 0.5) * (h / n_rows) - 0.5
    sx = (np.arange(n_cols) + 0.5) * (w / n_cols) - 0.5
    return sy, sx, n_rows, n_cols


def slic_segment(
    lab: np.ndarray, n: int, compactness: float = 10.0, iters: int = 10
) -> SuperpixelPartition:
    """Partition a Lab image into about n superpixels.

    Distance is sqrt(d_lab^2 + (compactness/S)^2 * d_xy^2) with
    S = sqrt(h*w/n); ties go to the lowest cluster index. Runs
    enforce_connectivity before building the partition.
    """
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) Lab tensor, got shape {lab.shape}")
    h, w = lab.shape[:2]
    if n < 1:
        raise ValueError("superpixel count must be positive")
    if n > h * w:
        raise ValueError(f"cannot place {n} superpixels on {h}x{w} pixels")
    if iters < 1:
        raise ValueError("iteration count must be positive")

    step = math.sqrt(h * w / n)
    sy, sx, n_rows, n_cols = _seed_positions(h, w, n)
    grad = _gradient(lab)

    centers = np.empty((n_rows * n_cols, 5))  # (L, a, b, y, x)
    for i, y in enumerate(sy):
        for j, x in enumerate(sx):
            py = min(h - 1, max(0, int(math.floor(y))))
            px = min(w - 1, max(0, int(math.floor(x))))
            y0, y1 = max(0, py - 1), min(h, py + 2)
            x0, x1 = max(0, px - 1), min(w, px + 2)
            window = grad[y0:y1, x0:x1]
            best = np.unravel_index(int(np.argmin(window)), window.shape)
            if window[best] < grad[py, px]:
                py, px = y0 + best[0], x0 + best[1]
            centers[i * n_cols + j] = (*lab[py, px], py, px)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    row_block = np.minimum((np.arange(h) * n_rows) // h, n_rows - 1)
    col_block = np.minimum((np.arange(w) * n_cols) // w, n_cols - 1)
    labels = (row_block[:, None] * n_cols + col_block[None, :]).astype(np.int64)

    spatial_scale = (compactness / step) ** 2
    reach = int(math.ceil(2.0 * step))
    for _ in range(iters):
        dist = np.full((h, w), np.inf)
        new_labels = labels.copy()
        for k in range(centers.shape[0]):
            cy, cx = centers[k, 3], centers[k, 4]
            y0 = max(0, int(math.floor(cy)) - reach)
            y1 = min(h, int(math.ceil(cy)) + reach + 1)
            x0 = max(0, int(math.floor(cx)) - reach)
            x1 = min(w, int(math.ceil(cx)) + reach + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            d_lab = ((lab[y0:y1, x0:x1] - centers[k, :3]) ** 2).sum(axis=2)
            d_xy = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = d_lab + spatial_scale * d_xy
            window = dist[y0:y1, x0:x1]
            better = d < window
            window[better] = d[better]
            new_labels[y0:y1, x0:x1][better] = k
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=centers.shape[0])
        occupied = counts > 0
        for col, values in enumerate((lab[..., 0], lab[..., 1], lab[..., 2], yy, xx)):
            sums = np.bincount(flat, weights=values.ravel(), minlength=centers.shape[0])
            centers[occupied, col] = sums[occupied] / counts[occupied]

    merged = enforce_connectivity(labels, min_size=(h * w / n) / 4.0)
    return partition_from_labels(merged, lab)


def partition_from_labels(labels: np.ndarray, lab: np.ndarray) -> SuperpixelPartition:
    """Assemble centroid/size records for a dense label map."""
    labels = np.asarray(labels)
    n_sp = int(labels.max()) + 1
    flat = labels.ravel()
    sizes = np.bincount(flat, minlength=n_sp)
    if np.any(sizes == 0):
        raise ValueError("label map must use dense labels 0..m-1")
    h, w = labels.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    centroids = np.empty((n_sp, 5))
    for col, values in enumerate((yy, xx, lab[..., 0], lab[..., 1], lab[..., 2])):
        centroids[:, col] = np.bincount(flat, weights=values.ravel(), minlength=n_sp) / sizes
    return SuperpixelPartition(
        labels=labels.astype(np.int64), n_superpixels=n_sp, centroids=centroids, sizes=sizes
    )


def _components(labels: np.ndarray) -> tuple[np.ndarray, int]:
    # 4-connected components of equal-label pixels, ids densified 0..m-1 in
    # raster order of each component's first pixel
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    offset = 0
    for value in np.unique(labels):
        mask = labels == value
        lbl, count = ndimage.label(mask)
        comp[mask] = lbl[mask] - 1 + offset
        offset += count
    first = np.full(offset, h * w, dtype=np.int64)
    np.minimum.at(first, comp.ravel(), np.arange(h * w))
    rank = np.empty(offset, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(offset)
    return rank[comp], offset


def enforce_connectivity(labels: np.ndarray, min_size: float | None = None) -> np.ndarray:
    """Split labels into 4-connected regions and absorb undersized fragments.

    Fragments smaller than min_size (default: a quarter of the mean region
    area, (h*w/n_labels)/4) merge into their largest adjacent region,
    cascading until every region is big enough or one region remains.
    Output labels are densified to 0..m-1 in raster order of first pixel.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("label map must be integer-valued")
    if labels.min() < 0:
        raise ValueError("labels must be nonnegative")
    h, w = labels.shape
    comp, m = _components(labels)
    if min_size is None:
        min_size = (h * w / len(np.unique(labels))) / 4.0

    flat = comp.ravel()
    sizes = np.bincount(flat, minlength=m).astype(np.int64)
    first = np.full(m, h * w, dtype=np.int64)
    np.minimum.at(first, flat, np.arange(h * w))

    adj: list[set[int]] = [set() for _ in range(m)]
    horiz = np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], axis=1)
    vert = np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], axis=1)
    pairs = np.concatenate([horiz, vert], axis=0)
    pairs = np.unique(pairs[pairs[:, 0] != pairs[:, 1]], axis=0)
    for a, b in pairs:
        adj[a].add(int(b))
        adj[b].add(int(a))

    parent = list(range(m))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    n_regions = m
    while n_regions > 1:
        roots = sorted({find(i) for i in range(m)}, key=lambda r: first[r])
        merged_any = False
        for r in roots:
            if find(r) != r or sizes[r] >= min_size:
                continue
            neighbors = {find(x) for x in adj[r]} - {r}
            if not neighbors:
                continue
            target = min(neighbors, key=lambda t: (-sizes[t], first[t]))
            # keep the root with the earlier first pixel as the region id
            keep, drop = (r, target) if first[r] < first[target] else (target, r)
            parent[drop] = keep
            sizes[keep] += sizes[drop]
            adj[keep] |= adj[drop]
            adj[drop] = set()
            n_regions -= 1
            merged_any = True
            if n_regions == 1:
                break
        if not merged_any:
            break

    roots = np.array([find(i) for i in range(m)], dtype=np.int64)
    final = np.unique(roots)
    order = np.argsort(first[final], kind="stable")
    remap = np.empty(m, dtype=np.int64)
    remap[final[order]] = np.arange(len(final))
    return remap[roots[comp]]


def superpixel_means(part: SuperpixelPartition, t: np.ndarray) -> np.ndarray:
    """Row i is the mean of t over pixels with label i; t is (h, w, c)."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected (h, w, c) tensor, got shape {arr.shape}")
    if arr.shape[:2] != part.labels.shape:
        raise ValueError(
            f"tensor spatial shape {arr.shape[:2]} does not match partition {part.labels.shape}"
        )
    n = part.n_superpixels
    flat = part.labels.ravel()
    out = np.empty((n, arr.shape[2]))
    for c in range(arr.shape[2]):
        out[:, c] = np.bincount(flat, weights=arr[..., c].ravel(), minlength=n) / part.sizes
    return out
