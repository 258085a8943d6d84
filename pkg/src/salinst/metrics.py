"""Evaluation suite: F-measure, MAE, IoU, and region average precision.

AP^r at an IoU threshold follows the per-instance reading: predictions and
ground truths are matched greedily per image in descending IoU order
(one-to-one), every matched pair at or above the threshold contributes the
pixel precision of its prediction, and the sum is normalized by the total
number of ground-truth instances in the dataset. A score-ranked variant
using per-instance confidences is available as a secondary mode.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .spectral import InstanceSegmentation
from .tensorio import buffer_to_labels, image_to_tensor, load_pnm

DEFAULT_TAUS = (0.5, 0.6, 0.7, 0.8, 0.9)


def _as_binary(mask: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(mask)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be strictly binary")
    return arr != 0


def f_measure(pred: np.ndarray, gt: np.ndarray, beta2: float = 0.3) -> float:
    """(1 + b2) P R / (b2 P + R), zero when the denominator vanishes."""
    p = _as_binary(pred, "prediction")
    g = _as_binary(gt, "ground truth")
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    tp = float(np.count_nonzero(p & g))
    fp = float(np.count_nonzero(p & ~g))
    fn = float(np.count_nonzero(~p & g))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    denom = beta2 * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


def max_f_measure(saliency: np.ndarray, gt: np.ndarray, beta2: float = 0.3) -> float:
    """Max F over the 256-level threshold sweep t in {0, 1/255, ..., 1}."""
    s = np.asarray(saliency, dtype=np.float64)
    g = _as_binary(gt, "ground truth")
    if s.shape != g.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {g.shape}")
    best = 0.0
    for level in range(256):
        t = level / 255.0
        best = max(best, f_measure((s >= t).astype(np.int64), g, beta2))
    return best


def mae(s: np.ndarray, g: np.ndarray) -> float:
    """Mean absolute pixelwise difference of two [0, 1] maps."""
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if s.shape != g.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {g.shape}")
    return float(np.abs(s - g).mean())


def instance_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; 1 when both masks are empty."""
    ma = _as_binary(a, "mask a")
    mb = _as_binary(b, "mask b")
    if ma.shape != mb.shape:
        raise ValueError(f"shape mismatch: {ma.shape} vs {mb.shape}")
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(ma & mb)) / float(union)


def masks_from_labels(labels: np.ndarray) -> list[np.ndarray]:
    """One boolean mask per instance id >= 1, ascending by id."""
    arr = np.asarray(labels)
    ids = np.unique(arr)
    return [arr == i for i in ids if i >= 1]


def _mask_list(item) -> list[np.ndarray]:
    if isinstance(item, InstanceSegmentation):
        return masks_from_labels(item.labels)
    arr = np.asarray(item)
    if arr.ndim == 2:
        return masks_from_labels(arr)
    return [_as_binary(m, "instance mask") for m in item]


def match_instances(
    pred_masks: list[np.ndarray], gt_masks: list[np.ndarray]
) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching in descending IoU order.

    Returns (pred index, gt index, IoU) triples; pairs with zero IoU are
    never matched. Ties break on the smaller (pred, gt) index pair.
    """
    if not pred_masks or not gt_masks:
        return []
    iou = np.array([[instance_iou(p.astype(np.int64), g.astype(np.int64)) for g in gt_masks] for p in pred_masks])
    matches = []
    while True:
        flat = int(np.argmax(iou))
        pi, gi = divmod(flat, iou.shape[1])
        if iou[pi, gi] <= 0.0:
            break
        matches.append((pi, gi, float(iou[pi, gi])))
        iou[pi, :] = -1.0
        iou[:, gi] = -1.0
    return matches


def ap_r(preds: list, gts: list, tau: float) -> float:
    """Region AP at IoU threshold tau over a dataset.

    Each image contributes the pixel precision of every matched prediction
    whose IoU clears tau; the total is divided by the number of
    ground-truth instances across the dataset.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    total_gt = 0
    precision_sum = 0.0
    for pred_item, gt_item in zip(preds, gts):
        pred_masks = _mask_list(pred_item)
        gt_masks = _mask_list(gt_item)
        total_gt += len(gt_masks)
        for pi, gi, iou in match_instances(pred_masks, gt_masks):
            if iou >= tau:
                inter = np.count_nonzero(pred_masks[pi] & gt_masks[gi])
                area = np.count_nonzero(pred_masks[pi])
                if area:
                    precision_sum += inter / area
    if total_gt == 0:
        return 0.0
    return precision_sum / total_gt


def ap_r_scored(
    preds: list[InstanceSegmentation], gts: list, tau: float
) -> float:
    """Secondary score-ranked AP: instances are ranked by confidence across
    the dataset, greedily matched to unmatched ground truths of their image
    at IoU >= tau, and AP is the mean of precision-at-rank over true
    positives, normalized by the ground-truth count."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions for {len(gts)} ground truths")
    entries = []
    gt_masks_all = []
    total_gt = 0
    for img_idx, (seg, gt_item) in enumerate(zip(preds, gts)):
        gt_masks = _mask_list(gt_item)
        gt_masks_all.append(gt_masks)
        total_gt += len(gt_masks)
        for inst_idx, mask in enumerate(_mask_list(seg)):
            score = float(seg.confidences[inst_idx]) if inst_idx < len(seg.confidences) else 0.0
            entries.append((-score, img_idx, inst_idx, mask))
    entries.sort(key=lambda e: (e[0], e[1], e[2]))

    claimed = [set() for _ in gt_masks_all]
    tp_flags = []
    for _, img_idx, _, mask in entries:
        best_iou, best_gi = 0.0, None
        for gi, gmask in enumerate(gt_masks_all[img_idx]):
            if gi in claimed[img_idx]:
                continue
            iou = instance_iou(mask.astype(np.int64), gmask.astype(np.int64))
            if iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi is not None and best_iou >= tau:
            claimed[img_idx].add(best_gi)
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    if total_gt == 0:
        return 0.0
    ap = 0.0
    tp_seen = 0
    for rank, flag in enumerate(tp_flags, start=1):
        if flag:
            tp_seen += 1
            ap += tp_seen / rank
    return ap / total_gt


# ---------------------------------------------------------------------------
# Dataset-level evaluation driven by a JSON manifest


@dataclass
class EvalReport:
    """Aggregated scores plus one record per evaluated pair."""

    ap_r: dict[float, float] = field(default_factory=dict)
    max_f: float | None = None
    mae: float | None = None
    per_image: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap_r": {f"{tau:g}": value for tau, value in self.ap_r.items()},
            "max_f": self.max_f,
            "mae": self.mae,
            "per_image": self.per_image,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def evaluate_manifest(
    manifest: dict, base_dir: str = ".", taus: tuple[float, ...] = DEFAULT_TAUS, beta2: float = 0.3
) -> EvalReport:
    """Score the (prediction, ground truth) pairs listed in a manifest.

    The manifest carries two optional sections, each a list of
    {"pred": path, "gt": path} pairs: "instances" (16-bit label-map PGMs,
    evaluated with AP^r) and "saliency" (grayscale prediction PGM against a
    mask PGM, evaluated with maxF and MAE). Relative paths resolve against
    base_dir.
    """
    for key in manifest:
        if key not in ("instances", "saliency"):
            raise ValueError(f"unknown manifest section {key!r}")

    def _resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    report = EvalReport()
    pred_labels = []
    gt_labels = []
    for pair in manifest.get("instances", ()):
        pred = buffer_to_labels(load_pnm(_resolve(pair["pred"])))
        gt = buffer_to_labels(load_pnm(_resolve(pair["gt"])))
        pred_labels.append(pred)
        gt_labels.append(gt)
        matches = match_instances(masks_from_labels(pred), masks_from_labels(gt))
        report.per_image.append(
            {
                "kind": "instances",
                "pred": pair["pred"],
                "gt": pair["gt"],
                "n_pred": len(masks_from_labels(pred)),
                "n_gt": len(masks_from_labels(gt)),
                "matched_ious": [round(m[2], 6) for m in matches],
            }
        )
    if pred_labels:
        report.ap_r = {tau: ap_r(pred_labels, gt_labels, tau) for tau in taus}

    fs, maes = [], []
    for pair in manifest.get("saliency", ()):
        pred_buf = load_pnm(_resolve(pair["pred"]))
        gt_buf = load_pnm(_resolve(pair["gt"]))
        sal = image_to_tensor(pred_buf)[:, :, 0]
        gt = (image_to_tensor(gt_buf)[:, :, 0] >= 0.5).astype(np.int64)
        f = max_f_measure(sal, gt, beta2)
        m = mae(sal, gt.astype(np.float64))
        fs.append(f)
        maes.append(m)
        report.per_image.append(
            {
                "kind": "saliency",
                "pred": pair["pred"],
                "gt": pair["gt"],
                "max_f": round(f, 6),
                "mae": round(m, 6),
            }
        )
    if fs:
        report.max_f = float(np.mean(fs))
        report.mae = float(np.mean(maes))
    return report
