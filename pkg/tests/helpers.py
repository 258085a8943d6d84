"""Independent oracles used by the tests.

Everything here deliberately avoids the library's own code paths (and
numpy.linalg where the library result is under test): determinants come
from hand-rolled Gaussian elimination, eigenvalues from Sturm-count
bisection on the characteristic polynomial, clustering optima from
exhaustive assignment enumeration, and CRF minima from enumerating all
2^N labelings.
"""

from __future__ import annotations

import numpy as np


def gauss_det(m: np.ndarray) -> float:
    """Determinant via Gaussian elimination with partial pivoting."""
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    sign = 1.0
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(a[col:, col])))
        if a[pivot, col] == 0.0:
            return 0.0
        if pivot != col:
            a[[col, pivot]] = a[[pivot, col]]
            sign = -sign
        a[col + 1 :] -= a[col + 1 :, col : col + 1] / a[col, col] * a[col]
    return sign * float(np.prod(np.diag(a)))


def count_eigs_below(m: np.ndarray, t: float) -> int:
    """Number of eigenvalues of a symmetric matrix strictly below t.

    Sturm-sequence count through the signs of the leading principal minors
    of (m - t I), read off the pivots of symmetric elimination; a vanishing
    pivot nudges t by one part in 1e13.
    """
    n = m.shape[0]
    shift = 0.0
    while True:
        a = np.array(m, dtype=np.float64) - (t + shift) * np.eye(n)
        negatives = 0
        ok = True
        for col in range(n):
            pivot = a[col, col]
            if abs(pivot) < 1e-300:
                ok = False
                break
            if pivot < 0:
                negatives += 1
            a[col + 1 :] -= a[col + 1 :, col : col + 1] / pivot * a[col]
        if ok:
            return negatives
        shift = 1e-13 if shift == 0.0 else shift * 2.0


def charpoly_eigs(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """All eigenvalues of a symmetric matrix by bisection on the Sturm count."""
    n = m.shape[0]
    radius = float(np.max(np.abs(m))) * n + 1.0
    eigs = []
    for idx in range(n):
        lo, hi = -radius, radius
        while hi - lo > tol:
            mid = (lo + hi) / 2.0
            if count_eigs_below(m, mid) > idx:
                hi = mid
            else:
                lo = mid
        eigs.append((lo + hi) / 2.0)
    return np.array(eigs)


def brute_force_wcss(x: np.ndarray, k: int) -> float:
    """Minimum within-cluster sum of squares over every k^n assignment."""
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    codes = np.arange(k**n)
    assign = np.empty((k**n, n), dtype=np.int8)
    for i in range(n):
        assign[:, i] = codes % k
        codes //= k
    total = np.zeros(k**n)
    for j in range(k):
        mask = assign == j
        cnt = np.maximum(mask.sum(axis=1), 1)
        s = (mask * x).sum(axis=1)
        sq = (mask * x**2).sum(axis=1)
        total += sq - s * s / cnt
    return float(total.min())


def wcss_of(x: np.ndarray, labels: np.ndarray, k: int) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    total = 0.0
    for j in range(k):
        members = x[labels == j]
        if members.shape[0]:
            total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def enumerate_min_energy_labeling(unary_probs: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Argmin-energy binary labeling over all 2^N assignments.

    unary_probs is (N, 2); kernel is the (N, N) pairwise coupling with zero
    diagonal. Returns the minimizing labeling as an int vector.
    """
    n = unary_probs.shape[0]
    labelings = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.int64)
    neg_log = -np.log(np.maximum(unary_probs, 1e-12))
    unary_cost = labelings @ neg_log[:, 1] + (1 - labelings) @ neg_log[:, 0]
    pair_cost = np.empty(2**n)
    iu = np.triu_indices(n, 1)
    kvals = kernel[iu]
    differs = labelings[:, iu[0]] != labelings[:, iu[1]]
    pair_cost = differs @ kvals
    total = unary_cost + pair_cost
    return labelings[int(np.argmin(total))]
