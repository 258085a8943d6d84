"""Synthetic fixtures with known instance masks for end-to-end checks.

Places non-overlapping bright shapes (disks or axis-aligned rectangles) on
a dark background, deterministically from a seed. The saliency map is the
union of the shape masks, the feature map is the byte-scaled RGB channels,
and the ground truth labels each shape 1..count, so a correct pipeline run
can be scored against construction.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .tensorio import labels_to_buffer, save_npy, save_pnm, tensor_to_image, write_bytes_atomic


class PlacementError(RuntimeError):
    """Shapes could not be placed without overlap within the attempt budget."""


# bright, well-separated palette (byte values / 255)
_PALETTE = np.array(
    [
        (230, 38, 38),
        (38, 217, 51),
        (51, 89, 242),
        (242, 230, 26),
        (230, 51, 217),
        (26, 217, 230),
        (242, 140, 26),
        (140, 51, 230),
    ],
    dtype=np.float64,
) / 255.0

_BACKGROUND = 13.0 / 255.0


@dataclass(frozen=True)
class SynthFixture:
    """Arrays of one generated scene; shapes records are (kind, cy, cx, ry, rx)."""

    image: np.ndarray
    saliency: np.ndarray
    features: np.ndarray
    gt_labels: np.ndarray
    k: int
    shapes: list[tuple[str, int, int, int, int]]


def _grid_cells(count: int, h: int, w: int) -> list[tuple[float, float, float, float]]:
    # partition the canvas into roughly square cells, one shape per cell
    rows = max(1, round(math.sqrt(count * h / w)))
    cols = math.ceil(count / rows)
    cells = []
    for r in range(rows):
        for c in range(cols):
            cells.append((r * h / rows, (r + 1) * h / rows, c * w / cols, (c + 1) * w / cols))
    return cells


def synth_fixture(
    count: int,
    height: int = 64,
    width: int = 64,
    seed: int = 0,
    shapes: str = "disk",
    feature_scale: float = 255.0,
) -> SynthFixture:
    """Generate a scene with `count` disjoint shapes; deterministic per seed."""
    if not 1 <= count <= 8:
        raise ValueError("shape count must lie in 1..8")
    if height < 32 or width < 32:
        raise ValueError("canvas must be at least 32x32")
    if shapes not in ("disk", "rect", "mix"):
        raise ValueError("shapes must be disk, rect, or mix")

    rng = np.random.default_rng(seed)
    short = min(height, width)
    gap = max(6, round(0.16 * short))
    colors = _PALETTE[rng.permutation(len(_PALETTE))[:count]]

    cells = _grid_cells(count, height, width)
    min_span = min(min(y1 - y0, x1 - x0) for y0, y1, x0, x1 in cells)
    # radii capped so shapes in adjacent cells can honor the separation gap
    r_cap = int((min_span - gap) / 2) - 1
    r_hi = min(max(5, round(0.16 * short)), r_cap)
    r_lo = min(max(4, round(0.09 * short)), r_hi)
    if r_hi < 3:
        raise PlacementError(f"{count} shapes cannot fit a {height}x{width} canvas with gap {gap}")

    placed: list[tuple[str, int, int, int, int]] = []
    for _layout in range(100):
        placed = []
        # one base size per scene keeps instance areas comparable, so each
        # shape contributes a similar superpixel count and the true partition
        # is the unambiguous clustering optimum
        base_r = int(rng.integers(r_lo, r_hi + 1))
        order = rng.permutation(len(cells))[:count]
        ok = True
        for idx in range(count):
            y0, y1, x0, x1 = cells[order[idx]]
            kind = shapes if shapes != "mix" else ("disk", "rect")[int(rng.integers(2))]
            done = False
            for _attempt in range(200):
                if kind == "disk":
                    ry = rx = base_r
                else:
                    # area-matched rectangle: half-extents multiply to (0.886 r)^2
                    aspect = rng.uniform(0.8, 1.25)
                    ry = max(3, round(0.886 * base_r * aspect))
                    rx = max(3, round(0.886 * base_r / aspect))
                bound = max(ry, rx)
                lo_y, hi_y = max(y0 + bound + 2, bound + 2), min(y1 - bound - 2, height - bound - 2)
                lo_x, hi_x = max(x0 + bound + 2, bound + 2), min(x1 - bound - 2, width - bound - 2)
                if lo_y > hi_y or lo_x > hi_x:
                    continue
                cy = int(rng.integers(int(lo_y), int(hi_y) + 1))
                cx = int(rng.integers(int(lo_x), int(hi_x) + 1))
                extent = math.hypot(ry, rx) if kind == "rect" else ry
                if all(
                    math.hypot(cy - oy, cx - ox)
                    >= extent + (math.hypot(ory, orx) if okind == "rect" else ory) + gap
                    for okind, oy, ox, ory, orx in placed
                ):
                    placed.append((kind, cy, cx, ry, rx))
                    done = True
                    break
            if not done:
                ok = False
                break
        if ok:
            break
    else:
        raise PlacementError(f"could not place {count} shapes on {height}x{width} after 100 layouts")

    yy, xx = np.mgrid[0:height, 0:width]
    image = np.full((height, width, 3), _BACKGROUND)
    gt = np.zeros((height, width), dtype=np.int64)
    for label, (kind, cy, cx, ry, rx) in enumerate(placed, start=1):
        if kind == "disk":
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= ry**2
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        gt[mask] = label
        image[mask] = colors[label - 1]

    saliency = (gt > 0).astype(np.float64)
    features = image * feature_scale
    return SynthFixture(
        image=image, saliency=saliency, features=features, gt_labels=gt, k=count, shapes=placed
    )


def write_fixture(fix: SynthFixture, outdir: str) -> dict[str, str]:
    """Write image.ppm, saliency.pgm, features.npy, instances.pgm, k.json."""
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "image": os.path.join(outdir, "image.ppm"),
        "saliency": os.path.join(outdir, "saliency.pgm"),
        "features": os.path.join(outdir, "features.npy"),
        "instances": os.path.join(outdir, "instances.pgm"),
        "k": os.path.join(outdir, "k.json"),
    }
    save_pnm(paths["image"], tensor_to_image(fix.image, bits=8))
    save_pnm(paths["saliency"], tensor_to_image(fix.saliency, bits=8))
    save_npy(paths["features"], fix.features)
    save_pnm(paths["instances"], labels_to_buffer(fix.gt_labels))
    payload = {"k": fix.k, "shapes": [list(s) for s in fix.shapes]}
    write_bytes_atomic(paths["k"], (json.dumps(payload, indent=2) + "\n").encode("utf-8"))
    return paths
