"""Numerical kernels for the network micro-blocks used by the pipeline.

Three verifiable-by-hand kernels: channel recalibration (squeeze/excite
gating), dense-block connectivity (BN -> ReLU -> 3x3 conv on channel
concatenations), and the weighted cross-entropy loss with its analytic
gradient. Batch norm runs in inference mode on stored statistics; nothing
here trains. A finite-difference harness checks gradients against central
differences.

Parameters can be loaded from NPY files through a JSON manifest mapping
parameter names to paths (see README for the naming convention).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensorio import load_npy

LOG_EPS = 1e-12


@dataclass(frozen=True)
class SeParams:
    """Weights of the squeeze/excite gate: w1 is (c/r, c), w2 is (c, c/r)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    r: int = 16

    def __post_init__(self):
        c = self.w1.shape[1] if self.w1.ndim == 2 else -1
        if self.r < 1:
            raise ValueError("reduction ratio must be positive")
        if self.w1.ndim != 2 or c % self.r != 0 or self.w1.shape[0] != c // self.r:
            raise ValueError(f"w1 must be (c/r, c) with c divisible by r={self.r}, got {self.w1.shape}")
        if self.w2.shape != (c, c // self.r):
            raise ValueError(f"w2 must be (c, c/r), got {self.w2.shape}")
        if self.b1.shape != (c // self.r,) or self.b2.shape != (c,):
            raise ValueError("bias shapes must be (c/r,) and (c,)")

    @property
    def channels(self) -> int:
        return self.w1.shape[1]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def se_gate(x: np.ndarray, params: SeParams) -> np.ndarray:
    """Per-channel gate sigmoid(fc2(relu(fc1(avgpool(x))))), each in (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (h, w, c) tensor, got shape {x.shape}")
    if x.shape[2] != params.channels:
        raise ValueError(f"tensor has {x.shape[2]} channels, params expect {params.channels}")
    pooled = x.mean(axis=(0, 1))
    hidden = np.maximum(params.w1 @ pooled + params.b1, 0.0)
    return _sigmoid(params.w2 @ hidden + params.b2)


def se_forward(x: np.ndarray, params: SeParams) -> np.ndarray:
    """Channel recalibration: x scaled per channel by its gate."""
    return np.asarray(x, dtype=np.float64) * se_gate(x, params)


@dataclass(frozen=True)
class DenseLayerParams:
    """One dense-block layer: inference BN stats plus a 3x3 conv kernel.

    conv_kernel has shape (3, 3, in_channels, growth); bn_var must be
    strictly positive (no epsilon is added).
    """

    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    conv_kernel: np.ndarray

    def __post_init__(self):
        cin = self.bn_gamma.shape[0] if self.bn_gamma.ndim == 1 else -1
        for name in ("bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            if getattr(self, name).shape != (cin,):
                raise ValueError(f"{name} must be a length-{cin} vector")
        if np.any(self.bn_var <= 0):
            raise ValueError("bn_var must be strictly positive")
        k = self.conv_kernel
        if k.ndim != 4 or k.shape[:2] != (3, 3) or k.shape[2] != cin:
            raise ValueError(f"conv_kernel must be (3, 3, {cin}, growth), got {k.shape}")

    @property
    def in_channels(self) -> int:
        return self.bn_gamma.shape[0]

    @property
    def growth(self) -> int:
        return self.conv_kernel.shape[3]


def _bn_relu_conv(x: np.ndarray, layer: DenseLayerParams) -> np.ndarray:
    norm = (x - layer.bn_mean) / np.sqrt(layer.bn_var) * layer.bn_gamma + layer.bn_beta
    act = np.maximum(norm, 0.0)
    padded = np.pad(act, ((1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(0, 1))  # (h, w, c, 3, 3)
    return np.einsum("hwcij,ijcg->hwg", windows, layer.conv_kernel, optimize=True)


def dense_block_forward(x0: np.ndarray, layers: Sequence[DenseLayerParams]) -> np.ndarray:
    """Run a dense block: layer l maps the concatenation of all previous
    feature maps through BN -> ReLU -> 3x3 conv (zero padding 1, so spatial
    shape is preserved); the result is the concatenation of every map, so
    the output has c0 + sum(growth) channels.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 3:
        raise ValueError(f"expected (h, w, c) tensor, got shape {x0.shape}")
    feats = [x0]
    channels = x0.shape[2]
    for idx, layer in enumerate(layers):
        if layer.in_channels != channels:
            raise ValueError(
                f"layer {idx} expects {layer.in_channels} input channels, concatenation has {channels}"
            )
        stacked = np.concatenate(feats, axis=2)
        feats.append(_bn_relu_conv(stacked, layer))
        channels += layer.growth
    return np.concatenate(feats, axis=2)


class CrossEntropy(NamedTuple):
    loss: float
    grad: np.ndarray
    clamped: bool


def _ce_core(yhat: np.ndarray, y: np.ndarray, weights: np.ndarray) -> CrossEntropy:
    n = yhat.shape[0]
    safe = np.maximum(yhat, LOG_EPS)
    weighted = weights[None, :] * y
    loss = -float(np.sum(weighted * np.log(safe))) / n
    grad = -(weighted / safe) / n
    clamped = bool(np.any((y > 0) & (yhat < LOG_EPS)))
    return CrossEntropy(loss, grad, clamped)


def weighted_cross_entropy(
    yhat: np.ndarray, y: np.ndarray, class_weights: np.ndarray | None = None
) -> CrossEntropy:
    """Mean weighted cross-entropy over rows plus its gradient w.r.t. yhat.

    yhat rows must be probability vectors (sum 1 within 1e-9); y rows must
    be one-hot. Zero probability at a true class is clamped at 1e-12 and
    reported through the `clamped` flag rather than raising.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.ndim != 2 or yhat.shape != y.shape:
        raise ValueError(f"yhat and y must share an (n, c) shape, got {yhat.shape} vs {y.shape}")
    n, c = yhat.shape
    if class_weights is None:
        class_weights = np.ones(c)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if class_weights.shape != (c,):
        raise ValueError(f"class_weights must be a length-{c} vector")
    if np.any(yhat < 0) or np.any(yhat > 1.0 + 1e-9):
        raise ValueError("yhat entries must lie in [0, 1]")
    if np.any(np.abs(yhat.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("yhat rows must sum to 1 within 1e-9")
    if not np.all((y == 0) | (y == 1)) or np.any(y.sum(axis=1) != 1):
        raise ValueError("y rows must be one-hot")
    return _ce_core(yhat, y, class_weights)


def loss_surface(
    y: np.ndarray, class_weights: np.ndarray | None = None
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Unvalidated view of the loss for gradient checking: the returned map
    evaluates loss and gradient at arbitrary (off-simplex) points so central
    differences can probe it.
    """
    y = np.asarray(y, dtype=np.float64)
    weights = np.ones(y.shape[1]) if class_weights is None else np.asarray(class_weights, dtype=np.float64)

    def evaluate(yhat: np.ndarray) -> tuple[float, np.ndarray]:
        res = _ce_core(np.asarray(yhat, dtype=np.float64), y, weights)
        return res.loss, res.grad

    return evaluate


def finite_diff_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray, eps: float = 1e-5
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    if not 0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    x = np.asarray(x, dtype=np.float64)
    _, grad = f(x)
    grad = np.asarray(grad, dtype=np.float64)
    worst = 0.0
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        hi = x.copy()
        lo = x.copy()
        hi[idx] += eps
        lo[idx] -= eps
        numeric = (f(hi)[0] - f(lo)[0]) / (2.0 * eps)
        err = abs(grad[idx] - numeric) / max(1.0, abs(grad[idx]))
        worst = max(worst, err)
        it.iternext()
    return worst


# ---------------------------------------------------------------------------
# Parameter manifests: JSON {name: npy path}, paths relative to the manifest


def load_param_manifest(path: str) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        mapping = json.load(fh)
    if not isinstance(mapping, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()
    ):
        raise ValueError("parameter manifest must map names to NPY paths")
    base = os.path.dirname(os.path.abspath(path))
    out = {}
    for name, rel in mapping.items():
        target = rel if os.path.isabs(rel) else os.path.join(base, rel)
        out[name] = load_npy(target)
    return out


def se_params_from_manifest(params: dict[str, np.ndarray], prefix: str = "se.") -> SeParams:
    """Build SeParams from manifest entries se.w1/se.b1/se.w2/se.b2; the
    reduction ratio is inferred from the w1 shape."""
    try:
        w1 = params[prefix + "w1"]
        b1 = params[prefix + "b1"]
        w2 = params[prefix + "w2"]
        b2 = params[prefix + "b2"]
    except KeyError as exc:
        raise ValueError(f"manifest missing SE parameter {exc.args[0]!r}") from None
    if w1.ndim != 2 or w1.shape[0] == 0 or w1.shape[1] % w1.shape[0] != 0:
        raise ValueError(f"cannot infer reduction ratio from w1 shape {w1.shape}")
    return SeParams(w1=w1, b1=b1, w2=w2, b2=b2, r=w1.shape[1] // w1.shape[0])


def dense_layers_from_manifest(
    params: dict[str, np.ndarray], prefix: str = "dense."
) -> list[DenseLayerParams]:
    """Build dense layers from entries dense.<i>.bn_gamma ... dense.<i>.conv_kernel,
    indices contiguous from 0."""
    layers = []
    i = 0
    while f"{prefix}{i}.conv_kernel" in params:
        fields = {}
        for name in ("bn_gamma", "bn_beta", "bn_mean", "bn_var", "conv_kernel"):
            key = f"{prefix}{i}.{name}"
            if key not in params:
                raise ValueError(f"manifest missing {key!r}")
            fields[name] = params[key]
        layers.append(DenseLayerParams(**fields))
        i += 1
    return layers
