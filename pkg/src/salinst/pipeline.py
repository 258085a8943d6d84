"""End-to-end instance segmentation: saliency masking, SLIC, clustering.

Stage order: optional dense-CRF refinement of the saliency map, background
blackout below the saliency threshold, Lab conversion, SLIC superpixels,
feature-map resampling to image resolution, then spectral clustering into
k instances. Every stage is deterministic, and per-stage wall times are
collected for the machine-parseable timing log lines.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .crf import CrfParams, UnaryField, mean_field_refine
from .slic import rgb_to_lab, slic_segment
from .spectral import InstanceSegmentation, SpectralParams, cluster_instances

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Pipeline knobs; defaults follow the stock parameterization."""

    n_superpixels: int = 250
    compactness: float = 10.0
    slic_iters: int = 10
    lam: float = 3.0
    sigma2: float = 10.0
    saliency_threshold: float = 0.5
    k_override: int | None = None
    kmeans_iters: int = 100
    crf: CrfParams = field(default_factory=CrfParams)
    crf_grid_limit: int = 128

    def __post_init__(self):
        if self.n_superpixels < 1:
            raise ValueError("n_superpixels must be positive")
        if not 0.0 < self.saliency_threshold < 1.0:
            raise ValueError("saliency_threshold must lie in (0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        crf_data = dict(data.pop("crf", {}))
        known = {f for f in cls.__dataclass_fields__ if f != "crf"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        crf_unknown = set(crf_data) - set(CrfParams.__dataclass_fields__)
        if crf_unknown:
            raise ValueError(f"unknown crf config keys: {sorted(crf_unknown)}")
        return cls(crf=CrfParams(**crf_data), **data)

    @classmethod
    def from_json_file(cls, path: str) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def override(self, **kwargs) -> "PipelineConfig":
        crf_fields = {k: v for k, v in kwargs.items() if k in CrfParams.__dataclass_fields__}
        top = {k: v for k, v in kwargs.items() if k not in crf_fields}
        cfg = replace(self, **top) if top else self
        if crf_fields:
            cfg = replace(cfg, crf=replace(cfg.crf, **crf_fields))
        return cfg


@dataclass(frozen=True)
class PipelineResult:
    segmentation: InstanceSegmentation
    saliency: np.ndarray  # the (possibly CRF-refined) map actually used
    timings: dict[str, float]


def _resize_features(features: np.ndarray, h: int, w: int) -> np.ndarray:
    from .tensorio import resize_bilinear

    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"features must be (h, w) or (h, w, c), got shape {arr.shape}")
    if arr.shape[:2] != (h, w):
        arr = resize_bilinear(arr, h, w)
    return arr


def run_pipeline(
    image: np.ndarray,
    saliency: np.ndarray,
    features: np.ndarray,
    k: int,
    config: PipelineConfig | None = None,
    refine_crf: bool = False,
) -> PipelineResult:
    """Segment the salient region of one image into k instances."""
    config = config or PipelineConfig()
    image = np.asarray(image, dtype=np.float64)
    saliency = np.asarray(saliency, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (h, w, 3), got shape {image.shape}")
    if saliency.shape != image.shape[:2]:
        raise ValueError(
            f"saliency shape {saliency.shape} does not match image {image.shape[:2]}"
        )
    if config.k_override is not None:
        k = config.k_override
    if k < 1:
        raise ValueError("instance count k must be at least 1")

    timings: dict[str, float] = {}

    def _stage(name: str, fn):
        start = time.perf_counter()
        out = fn()
        timings[name] = time.perf_counter() - start
        log.info("timing stage=%s seconds=%.4f", name, timings[name])
        return out

    if refine_crf:
        saliency = _stage(
            "crf",
            lambda: mean_field_refine(
                UnaryField.from_saliency(saliency),
                image * 255.0,
                config.crf,
                grid_limit=config.crf_grid_limit,
            ).saliency,
        )

    def _mask_and_lab():
        masked = image.copy()
        masked[saliency < config.saliency_threshold] = 0.0
        return rgb_to_lab(masked)

    lab = _stage("mask_lab", _mask_and_lab)
    part = _stage(
        "slic",
        lambda: slic_segment(lab, config.n_superpixels, config.compactness, config.slic_iters),
    )
    resized = _stage("features", lambda: _resize_features(features, *image.shape[:2]))
    seg = _stage(
        "cluster",
        lambda: cluster_instances(
            part,
            saliency,
            resized,
            SpectralParams(lam=config.lam, sigma2=config.sigma2, k=k),
            saliency_threshold=config.saliency_threshold,
            kmeans_iters=config.kmeans_iters,
        ),
    )
    return PipelineResult(segmentation=seg, saliency=saliency, timings=timings)
