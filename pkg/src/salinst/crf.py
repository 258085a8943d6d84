"""Fully connected binary CRF over pixels with parallel mean-field inference.

The pairwise Potts cost couples every pixel pair through an appearance
kernel (positions + RGB) and a smoothness kernel (positions only). Message
passing is exact O(N^2) against the dense kernel, so inference is capped at
a configurable grid size; larger inputs run on a bilinearly downsampled
grid and the refined marginals are upsampled back. Positions are in pixels
and colors in [0, 255], matching the stock bandwidths (61, 13, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensorio import resize_bilinear

PROB_EPS = 1e-12
_DENSE_CAP = 4096  # largest pixel count for which the kernel matrix is materialized
_CHUNK = 512


@dataclass(frozen=True)
class CrfParams:
    """Pairwise weights/bandwidths and the mean-field iteration count."""

    w1: float = 30.0
    w2: float = 30.0
    theta_alpha: float = 61.0
    theta_beta: float = 13.0
    theta_gamma: float = 1.0
    iters: int = 10

    def __post_init__(self):
        if min(self.theta_alpha, self.theta_beta, self.theta_gamma) <= 0:
            raise ValueError("kernel bandwidths must be strictly positive")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("kernel weights must be nonnegative")
        if self.iters < 0:
            raise ValueError("iteration count must be nonnegative")


@dataclass(frozen=True)
class UnaryField:
    """Per-pixel (background, salient) probabilities, shape (h, w, 2)."""

    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.ndim != 3 or p.shape[2] != 2:
            raise ValueError(f"unary field must be (h, w, 2), got {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("unary probabilities must be finite and nonnegative")
        if np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-9):
            raise ValueError("unary pairs must sum to 1 within 1e-9")

    @classmethod
    def from_saliency(cls, saliency: np.ndarray) -> "UnaryField":
        s = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, 1.0)
        if s.ndim != 2:
            raise ValueError(f"saliency map must be 2-D, got shape {s.shape}")
        return cls(np.stack([1.0 - s, s], axis=2))

    @property
    def saliency(self) -> np.ndarray:
        return self.probs[:, :, 1]


def pairwise_kernel(
    p_i, p_j, color_i, color_j, params: CrfParams
) -> float:
    """Potts coupling strength between two pixels (positions in pixels,
    colors in [0, 255])."""
    dp2 = float(np.sum((np.asarray(p_i, dtype=np.float64) - np.asarray(p_j, dtype=np.float64)) ** 2))
    dc2 = float(
        np.sum((np.asarray(color_i, dtype=np.float64) - np.asarray(color_j, dtype=np.float64)) ** 2)
    )
    appearance = params.w1 * math.exp(
        -dp2 / (2.0 * params.theta_alpha**2) - dc2 / (2.0 * params.theta_beta**2)
    )
    smoothness = params.w2 * math.exp(-dp2 / (2.0 * params.theta_gamma**2))
    return appearance + smoothness


def _flatten_guides(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    positions = np.stack([yy.ravel(), xx.ravel()], axis=1)
    colors = img.reshape(h * w, img.shape[2]).astype(np.float64)
    return positions, colors


def _kernel_block(
    positions: np.ndarray, colors: np.ndarray, rows: slice, params: CrfParams
) -> np.ndarray:
    dp2 = ((positions[rows, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
    dc2 = ((colors[rows, None, :] - colors[None, :, :]) ** 2).sum(axis=2)
    block = params.w1 * np.exp(
        -dp2 / (2.0 * params.theta_alpha**2) - dc2 / (2.0 * params.theta_beta**2)
    )
    block += params.w2 * np.exp(-dp2 / (2.0 * params.theta_gamma**2))
    return block


def _validate_pair(probs: np.ndarray, img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"guide image must be (h, w, 3), got shape {img.shape}")
    if img.shape[:2] != probs.shape[:2]:
        raise ValueError(
            f"guide image shape {img.shape[:2]} does not match field {probs.shape[:2]}"
        )


def crf_energy(
    labels: np.ndarray, unary: UnaryField, img: np.ndarray, params: CrfParams
) -> float:
    """Energy of a binary labeling: negative log unary likelihoods plus the
    Potts pairwise cost summed over unordered pixel pairs."""
    labels = np.asarray(labels)
    img = np.asarray(img, dtype=np.float64)
    _validate_pair(unary.probs, img)
    if labels.shape != unary.probs.shape[:2]:
        raise ValueError("label map shape does not match the unary field")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")

    flat = labels.ravel().astype(np.int64)
    n = flat.size
    probs = unary.probs.reshape(n, 2)
    chosen = probs[np.arange(n), flat]
    energy = -float(np.log(np.maximum(chosen, PROB_EPS)).sum())

    positions, colors = _flatten_guides(img)
    for start in range(0, n, _CHUNK):
        rows = slice(start, min(start + _CHUNK, n))
        block = _kernel_block(positions, colors, rows, params)
        differs = flat[rows.start : rows.stop, None] != flat[None, :]
        # count each unordered pair once: keep columns j > i
        cols = np.arange(n)[None, :] > np.arange(rows.start, rows.stop)[:, None]
        energy += float(block[differs & cols].sum())
    return energy


def mean_field_refine(
    unary: UnaryField,
    img: np.ndarray,
    params: CrfParams,
    grid_limit: int = 128,
    history: list | None = None,
) -> UnaryField:
    """Run parallel mean-field updates and return the refined marginals.

    Each iteration computes Q_i(l) from the unary likelihood and the kernel-
    weighted probability that its neighbors take the opposite label, reading
    the previous iteration's field, then renormalizes per pixel. With both
    kernel weights zero there is no coupling and the input is returned
    unchanged. If `history` is a list, each iteration's field is appended.
    """
    img = np.asarray(img, dtype=np.float64)
    _validate_pair(unary.probs, img)
    if params.w1 == 0.0 and params.w2 == 0.0:
        return UnaryField(unary.probs.copy())

    h, w = unary.probs.shape[:2]
    if max(h, w) > grid_limit:
        scale = grid_limit / max(h, w)
        dh, dw = max(1, round(h * scale)), max(1, round(w * scale))
        small_p = resize_bilinear(unary.probs, dh, dw)
        small_p = np.clip(small_p, PROB_EPS, None)
        small_p /= small_p.sum(axis=2, keepdims=True)
        small = mean_field_refine(
            UnaryField(small_p), resize_bilinear(img, dh, dw), params, grid_limit, history
        )
        up = np.clip(resize_bilinear(small.probs, h, w), PROB_EPS, None)
        up /= up.sum(axis=2, keepdims=True)
        return UnaryField(up)

    n = h * w
    base = np.maximum(unary.probs.reshape(n, 2), PROB_EPS)
    base = base / base.sum(axis=1, keepdims=True)
    log_base = np.log(base)
    positions, colors = _flatten_guides(img)

    kernel = None
    if n <= _DENSE_CAP:
        kernel = _kernel_block(positions, colors, slice(0, n), params)
        np.fill_diagonal(kernel, 0.0)

    diag = params.w1 + params.w2  # self-coupling excluded from messages
    q = base.copy()
    for _ in range(params.iters):
        flipped = q[:, ::-1]
        if kernel is not None:
            message = kernel @ flipped
        else:
            message = np.empty_like(flipped)
            for start in range(0, n, _CHUNK):
                rows = slice(start, min(start + _CHUNK, n))
                message[rows] = _kernel_block(positions, colors, rows, params) @ flipped
            message -= diag * flipped
        logits = log_base - message
        logits -= logits.max(axis=1, keepdims=True)
        q = np.exp(logits)
        q /= q.sum(axis=1, keepdims=True)
        if history is not None:
            history.append(UnaryField(q.reshape(h, w, 2).copy()))
    return UnaryField(q.reshape(h, w, 2))


def binarize(field: UnaryField, threshold: float = 0.5) -> np.ndarray:
    """Salient iff P(salient) >= threshold; returns an int 0/1 map."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (field.saliency >= threshold).astype(np.int64)
