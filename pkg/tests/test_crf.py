import math

import numpy as np
import pytest

from helpers import enumerate_min_energy_labeling
from salinst import crf


STOCK = crf.CrfParams()  # 30, 30, 61, 13, 1


# ---------------------------------------------------------------------------
# pairwise kernel


def test_kernel_at_zero_distance_is_sixty():
    value = crf.pairwise_kernel((0, 0), (0, 0), (10, 20, 30), (10, 20, 30), STOCK)
    assert value == 60.0


def test_kernel_appearance_decay_hand_case():
    # position distance^2 = 2 theta_alpha^2, identical colors: the appearance
    # term decays to 30/e and the smoothness exponent underflows to zero
    d = math.sqrt(2.0) * 61.0
    value = crf.pairwise_kernel((0.0, 0.0), (d, 0.0), (5, 5, 5), (5, 5, 5), STOCK)
    assert abs(value - 30.0 * math.exp(-1.0)) <= 1e-9
    assert abs(value - 11.036) <= 1e-3


def test_kernel_distant_colors_leave_smoothness():
    value = crf.pairwise_kernel((3, 4), (3, 4), (0, 0, 0), (10000, 10000, 10000), STOCK)
    assert abs(value - 30.0) <= 1e-12


# ---------------------------------------------------------------------------
# energy


def test_energy_single_pixel():
    unary = crf.UnaryField(np.array([[[0.2, 0.8]]]))
    img = np.zeros((1, 1, 3))
    e = crf.crf_energy(np.array([[1]]), unary, img, STOCK)
    assert abs(e - (-math.log(0.8))) <= 1e-12


def test_energy_uniform_labeling_has_no_pairwise_term():
    rng = np.random.default_rng(0)
    s = rng.uniform(0.05, 0.95, size=(3, 3))
    unary = crf.UnaryField.from_saliency(s)
    img = rng.uniform(0, 255, size=(3, 3, 3))
    e = crf.crf_energy(np.ones((3, 3), dtype=int), unary, img, STOCK)
    assert abs(e - (-np.log(s).sum())) <= 1e-9


def test_energy_two_pixel_enumeration():
    unary = crf.UnaryField(np.array([[[0.3, 0.7], [0.6, 0.4]]]))
    img = np.zeros((1, 2, 3))
    img[0, 1] = 20.0
    k01 = crf.pairwise_kernel((0, 0), (0, 1), img[0, 0], img[0, 1], STOCK)
    p = unary.probs[0]
    for l0 in (0, 1):
        for l1 in (0, 1):
            expected = -math.log(p[0][l0]) - math.log(p[1][l1]) + (k01 if l0 != l1 else 0.0)
            got = crf.crf_energy(np.array([[l0, l1]]), unary, img, STOCK)
            assert abs(got - expected) <= 1e-12


def test_energy_clamps_zero_probability():
    unary = crf.UnaryField(np.array([[[0.0, 1.0]]]))
    img = np.zeros((1, 1, 3))
    e = crf.crf_energy(np.array([[0]]), unary, img, STOCK)
    assert abs(e - (-math.log(1e-12))) <= 1e-9


def test_energy_rejects_nonbinary_labels():
    unary = crf.UnaryField(np.array([[[0.5, 0.5]]]))
    with pytest.raises(ValueError):
        crf.crf_energy(np.array([[2]]), unary, np.zeros((1, 1, 3)), STOCK)


# ---------------------------------------------------------------------------
# mean-field inference


def test_zero_weights_identity():
    rng = np.random.default_rng(1)
    unary = crf.UnaryField.from_saliency(rng.uniform(0, 1, size=(4, 5)))
    img = rng.uniform(0, 255, size=(4, 5, 3))
    out = crf.mean_field_refine(unary, img, crf.CrfParams(w1=0.0, w2=0.0))
    assert np.array_equal(out.probs, unary.probs)


def test_marginals_sum_to_one_every_iteration():
    rng = np.random.default_rng(2)
    unary = crf.UnaryField.from_saliency(rng.uniform(0, 1, size=(6, 6)))
    img = rng.uniform(0, 255, size=(6, 6, 3))
    history = []
    crf.mean_field_refine(unary, img, crf.CrfParams(iters=8), history=history)
    assert len(history) == 8
    for field in history:
        assert np.max(np.abs(field.probs.sum(axis=2) - 1.0)) <= 1e-9


def test_two_pixel_closed_form_single_iteration():
    probs = np.array([[[0.9, 0.1], [0.55, 0.45]]])
    unary = crf.UnaryField(probs)
    img = np.zeros((1, 2, 3))
    params = crf.CrfParams(iters=1)
    k01 = crf.pairwise_kernel((0, 0), (0, 1), (0, 0, 0), (0, 0, 0), params)
    # parallel update from the input field
    q0 = probs[0, 0] * np.exp(-k01 * probs[0, 1][::-1])
    q1 = probs[0, 1] * np.exp(-k01 * probs[0, 0][::-1])
    expected = np.stack([q0 / q0.sum(), q1 / q1.sum()])[None]
    out = crf.mean_field_refine(unary, img, params)
    assert np.allclose(out.probs, expected, atol=1e-12)


def test_agreement_kernel_pulls_weak_pixel():
    unary = crf.UnaryField(np.array([[[0.9, 0.1], [0.55, 0.45]]]))
    img = np.zeros((1, 2, 3))
    out = crf.mean_field_refine(unary, img, crf.CrfParams(iters=5))
    assert out.probs[0, 1, 1] < 0.45  # moves toward the confident neighbor's label


def test_uniform_field_stays_uniform():
    unary = crf.UnaryField(np.full((3, 3, 2), 0.5))
    img = np.full((3, 3, 3), 127.0)
    out = crf.mean_field_refine(unary, img, crf.CrfParams(iters=4))
    assert np.allclose(out.probs, 0.5, atol=1e-12)


def test_mean_field_map_energy_not_worse_than_unary_argmax():
    rng = np.random.default_rng(3)
    params = crf.CrfParams(iters=10)
    wins = 0
    trials = 30
    for _ in range(trials):
        h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        unary = crf.UnaryField.from_saliency(rng.uniform(0.02, 0.98, size=(h, w)))
        img = rng.uniform(0, 255, size=(h, w, 3))
        refined = crf.mean_field_refine(unary, img, params)
        e_map = crf.crf_energy(crf.binarize(refined, 0.5), unary, img, params)
        e_unary = crf.crf_energy(crf.binarize(unary, 0.5), unary, img, params)
        if e_map <= e_unary + 1e-9:
            wins += 1
    assert wins >= 0.95 * trials


def test_exact_enumeration_lower_bounds_mean_field():
    rng = np.random.default_rng(4)
    params = crf.CrfParams(iters=10)
    for _ in range(3):
        h, w = 3, 4  # 12 pixels, exhaustive over 4096 labelings
        unary = crf.UnaryField.from_saliency(rng.uniform(0.05, 0.95, size=(h, w)))
        img = rng.uniform(0, 255, size=(h, w, 3))
        n = h * w
        positions = np.stack(np.mgrid[0:h, 0:w], axis=2).reshape(n, 2)
        colors = img.reshape(n, 3)
        kernel = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                kernel[i, j] = kernel[j, i] = crf.pairwise_kernel(
                    positions[i], positions[j], colors[i], colors[j], params
                )
        best = enumerate_min_energy_labeling(unary.probs.reshape(n, 2), kernel).reshape(h, w)
        e_best = crf.crf_energy(best, unary, img, params)
        refined = crf.mean_field_refine(unary, img, params)
        e_map = crf.crf_energy(crf.binarize(refined, 0.5), unary, img, params)
        assert e_best <= e_map + 1e-9


def test_large_input_downsampled_grid():
    rng = np.random.default_rng(5)
    unary = crf.UnaryField.from_saliency(rng.uniform(0, 1, size=(40, 70)))
    img = rng.uniform(0, 255, size=(40, 70, 3))
    out = crf.mean_field_refine(unary, img, crf.CrfParams(iters=2), grid_limit=32)
    assert out.probs.shape == (40, 70, 2)
    assert np.max(np.abs(out.probs.sum(axis=2) - 1.0)) <= 1e-9


# ---------------------------------------------------------------------------
# binarize


def test_binarize_all_ones():
    field = crf.UnaryField(np.stack([np.zeros((2, 2)), np.ones((2, 2))], axis=2))
    assert np.all(crf.binarize(field, 0.5) == 1)


def test_binarize_boundary_is_salient():
    field = crf.UnaryField(np.full((1, 1, 2), 0.5))
    assert crf.binarize(field, 0.5)[0, 0] == 1


def test_binarize_monotone_in_threshold():
    rng = np.random.default_rng(6)
    field = crf.UnaryField.from_saliency(rng.uniform(0, 1, size=(8, 8)))
    counts = [crf.binarize(field, t).sum() for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_binarize_rejects_bad_threshold():
    field = crf.UnaryField(np.full((1, 1, 2), 0.5))
    with pytest.raises(ValueError):
        crf.binarize(field, 0.0)
