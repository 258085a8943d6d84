import json

import numpy as np
import pytest

from salinst import metrics as mt
from salinst.spectral import InstanceSegmentation
from salinst.synth import synth_fixture, write_fixture
from salinst.tensorio import labels_to_buffer, save_pnm, tensor_to_image


def _mask(total, ones_at):
    m = np.zeros(total, dtype=np.int64)
    m[list(ones_at)] = 1
    return m.reshape(1, total)


# ---------------------------------------------------------------------------
# F-measure


def test_f_measure_perfect():
    gt = _mask(10, range(4))
    assert mt.f_measure(gt, gt) == 1.0


def test_f_measure_hand_case():
    # TP=12, FP=3, FN=8 gives P=0.8, R=0.6
    pred = _mask(30, range(15))
    gt = _mask(30, range(3, 23))
    got = mt.f_measure(pred, gt, beta2=0.3)
    assert abs(got - 0.624 / 0.84) <= 1e-12
    assert abs(got - 0.742857) <= 1e-6


def test_f_measure_empty_prediction():
    assert mt.f_measure(_mask(10, []), _mask(10, range(5))) == 0.0


def test_f_measure_shape_mismatch():
    with pytest.raises(ValueError):
        mt.f_measure(_mask(10, []), _mask(12, []))


# ---------------------------------------------------------------------------
# max F-measure


def test_max_f_on_exact_map():
    gt = _mask(16, range(7))
    assert mt.max_f_measure(gt.astype(np.float64), gt) == 1.0


def test_max_f_constant_half_saliency():
    gt = np.zeros((1, 16), dtype=np.int64)
    gt[0, :8] = 1
    got = mt.max_f_measure(np.full((1, 16), 0.5), gt)
    assert abs(got - (1.3 * 0.5) / (0.3 * 0.5 + 1.0)) <= 1e-12
    assert abs(got - 0.565217) <= 1e-6


def test_max_f_inverted_map_keeps_all_salient_baseline():
    gt = np.zeros((1, 16), dtype=np.int64)
    gt[0, :8] = 1
    inverted = 1.0 - gt.astype(np.float64)
    got = mt.max_f_measure(inverted, gt)
    # independent sweep oracle
    best = max(
        mt.f_measure((inverted >= t / 255.0).astype(np.int64), gt) for t in range(256)
    )
    assert got == best
    assert got > 0.0


def test_max_f_dominates_fixed_thresholds():
    rng = np.random.default_rng(0)
    s = rng.uniform(0, 1, size=(9, 9))
    gt = (rng.uniform(0, 1, size=(9, 9)) > 0.5).astype(np.int64)
    top = mt.max_f_measure(s, gt)
    for t in (0.1, 0.25, 0.5, 0.75, 0.9):
        assert top >= mt.f_measure((s >= t).astype(np.int64), gt) - 1e-12


# ---------------------------------------------------------------------------
# MAE


def test_mae_identical_maps():
    s = np.random.default_rng(1).uniform(0, 1, size=(5, 5))
    assert mt.mae(s, s) == 0.0


def test_mae_maximal():
    assert mt.mae(np.ones((3, 3)), np.zeros((3, 3))) == 1.0


def test_mae_hand_case():
    got = mt.mae(np.array([[0.2, 0.8]]), np.array([[0.0, 1.0]]))
    assert abs(got - 0.2) <= 1e-15


def test_mae_symmetry_and_triangle():
    rng = np.random.default_rng(2)
    a, b, c = (rng.uniform(0, 1, size=(6, 6)) for _ in range(3))
    assert mt.mae(a, b) == mt.mae(b, a)
    assert mt.mae(a, c) <= mt.mae(a, b) + mt.mae(b, c) + 1e-12


# ---------------------------------------------------------------------------
# IoU


def test_iou_identical():
    m = _mask(12, range(6))
    assert mt.instance_iou(m, m) == 1.0


def test_iou_disjoint():
    assert mt.instance_iou(_mask(12, range(4)), _mask(12, range(6, 10))) == 0.0


def test_iou_both_empty():
    assert mt.instance_iou(_mask(6, []), _mask(6, [])) == 1.0


def test_iou_hand_case():
    pred = _mask(220, range(100))
    gt = _mask(220, range(20, 120))
    got = mt.instance_iou(pred, gt)
    assert abs(got - 80.0 / 120.0) <= 1e-12


# ---------------------------------------------------------------------------
# AP^r


def _label_map(shape, regions):
    out = np.zeros(shape, dtype=np.int64)
    for idx, region in enumerate(regions, start=1):
        out[region] = idx
    return out


def test_ap_r_perfect_predictions():
    maps = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 3, size=(8, 8))
        maps.append(labels)
    assert mt.ap_r(maps, maps, 0.5) == 1.0


def test_ap_r_hand_case():
    pred = np.zeros((1, 220), dtype=np.int64)
    pred[0, :100] = 1
    gt = np.zeros((1, 220), dtype=np.int64)
    gt[0, 20:120] = 1
    # IoU 80/120 passes tau=0.5; precision 80/100
    assert mt.ap_r([pred], [gt], 0.5) == 0.8


def test_ap_r_below_threshold_scores_zero():
    pred = np.zeros((1, 100), dtype=np.int64)
    pred[0, :40] = 1
    gt = np.zeros((1, 100), dtype=np.int64)
    gt[0, 30:90] = 1  # IoU = 10/90 < 0.5
    assert mt.ap_r([pred], [gt], 0.5) == 0.0


def test_ap_r_monotone_in_tau():
    rng = np.random.default_rng(3)
    for _ in range(20):
        preds, gts = [], []
        for _ in range(3):
            gts.append(rng.integers(0, 4, size=(10, 10)))
            noisy = gts[-1].copy()
            flip = rng.uniform(size=noisy.shape) < 0.2
            noisy[flip] = rng.integers(0, 4, size=int(flip.sum()))
            preds.append(noisy)
        values = [mt.ap_r(preds, gts, tau) for tau in (0.5, 0.6, 0.7, 0.8, 0.9)]
        assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_ap_r_invariant_to_label_permutation():
    rng = np.random.default_rng(4)
    gt = rng.integers(0, 4, size=(9, 9))
    pred = gt.copy()
    permuted = np.zeros_like(pred)
    for old, new in zip((1, 2, 3), (3, 1, 2)):
        permuted[pred == old] = new
    assert mt.ap_r([permuted], [gt], 0.7) == mt.ap_r([pred], [gt], 0.7)


def test_greedy_matching_one_to_one():
    rng = np.random.default_rng(5)
    for _ in range(10):
        pred_masks = [rng.uniform(size=(7, 7)) > 0.5 for _ in range(4)]
        gt_masks = [rng.uniform(size=(7, 7)) > 0.5 for _ in range(3)]
        matches = mt.match_instances(pred_masks, gt_masks)
        pis = [m[0] for m in matches]
        gis = [m[1] for m in matches]
        assert len(pis) == len(set(pis))
        assert len(gis) == len(set(gis))


def test_ap_r_accepts_instance_segmentation_objects():
    labels = np.zeros((6, 6), dtype=np.int64)
    labels[:3] = 1
    labels[3:] = 2
    seg = InstanceSegmentation(labels=labels, confidences=np.array([0.9, 0.8]))
    assert mt.ap_r([seg], [labels], 0.5) == 1.0


def test_ap_r_mismatched_lengths():
    with pytest.raises(ValueError):
        mt.ap_r([np.zeros((2, 2), dtype=int)], [], 0.5)


def test_ap_r_scored_perfect():
    labels = np.zeros((6, 6), dtype=np.int64)
    labels[:3] = 1
    labels[3:] = 2
    seg = InstanceSegmentation(labels=labels, confidences=np.array([0.9, 0.8]))
    assert mt.ap_r_scored([seg], [labels], 0.5) == 1.0


def test_ap_r_scored_false_positive_lowers_precision():
    gt = np.zeros((4, 8), dtype=np.int64)
    gt[:, :4] = 1
    pred = gt.copy()
    pred[0, 6] = 2  # spurious one-pixel instance with higher confidence
    seg = InstanceSegmentation(labels=pred, confidences=np.array([0.5, 0.9]))
    got = mt.ap_r_scored([seg], [gt], 0.5)
    assert got == 0.5  # true instance found at rank 2: precision 1/2, N=1


# ---------------------------------------------------------------------------
# manifest-driven evaluation


def test_evaluate_manifest_end_to_end(tmp_path):
    fix = synth_fixture(2, 64, 64, seed=11)
    write_fixture(fix, str(tmp_path / "fix"))
    save_pnm(str(tmp_path / "pred.pgm"), labels_to_buffer(fix.gt_labels))
    save_pnm(str(tmp_path / "sal.pgm"), tensor_to_image(fix.saliency, bits=8))
    save_pnm(str(tmp_path / "gtmask.pgm"), tensor_to_image(fix.saliency, bits=8))
    manifest = {
        "instances": [{"pred": "pred.pgm", "gt": "fix/instances.pgm"}],
        "saliency": [{"pred": "sal.pgm", "gt": "gtmask.pgm"}],
    }
    report = mt.evaluate_manifest(manifest, base_dir=str(tmp_path))
    assert report.ap_r[0.5] == 1.0 and report.ap_r[0.9] == 1.0
    assert report.max_f == 1.0
    assert report.mae == 0.0
    assert len(report.per_image) == 2
    parsed = json.loads(report.to_json())
    assert parsed["ap_r"]["0.5"] == 1.0


def test_evaluate_manifest_rejects_unknown_section():
    with pytest.raises(ValueError):
        mt.evaluate_manifest({"bogus": []})
