"""Reference implementations that avoid the code paths they check."""

from fractions import Fraction

import mpmath
import numpy as np
import scipy.linalg


def naive_covariance(a, b):
    """Double-loop sample covariance of row variables, (m - 1) divisor."""
    m = a.shape[1]
    mean_a = [sum(row) / m for row in a]
    mean_b = [sum(row) / m for row in b]
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            out[i, j] = sum((a[i, s] - mean_a[i]) * (b[j, s] - mean_b[j]) for s in range(m)) / (m - 1)
    return out


def mp_inv_sqrt(c, dps=40):
    mpmath.mp.dps = dps
    e, q = mpmath.eigsy(mpmath.matrix(c.tolist()))
    d = mpmath.diag([1 / mpmath.sqrt(x) for x in e])
    return q * d * q.T


def mp_whitened_cross(c11, c12, c22, dps=40):
    mpmath.mp.dps = dps
    t = mp_inv_sqrt(c11, dps) * mpmath.matrix(c12.tolist()) * mp_inv_sqrt(c22, dps)
    return np.array(t.tolist(), dtype=float)


def qr_canonical_correlations(x1, x2):
    """Unregularized canonical correlations from QR of the centred data.

    Views are (dimension, samples); correlations are the singular values of
    Q1' Q2 for the thin QR factors of the centred sample matrices.
    """
    a = (x1 - x1.mean(axis=1, keepdims=True)).T
    b = (x2 - x2.mean(axis=1, keepdims=True)).T
    q1, _ = np.linalg.qr(a)
    q2, _ = np.linalg.qr(b)
    return scipy.linalg.svd(q1.T @ q2, compute_uv=False, lapack_driver="gesvd")


def alternating_top_correlation(x1, x2, tol=1e-10, max_iter=100_000, seed=0):
    """Maximize corr(w1'x1, w2'x2) by alternating least-squares updates.

    With w2 fixed, the maximizing w1 is proportional to C11^{-1} C12 w2 and
    vice versa; iterating converges to the top canonical pair.
    """
    a = x1 - x1.mean(axis=1, keepdims=True)
    b = x2 - x2.mean(axis=1, keepdims=True)
    c11, c22, c12 = a @ a.T, b @ b.T, a @ b.T
    w2 = np.random.default_rng(seed).normal(size=x2.shape[0])
    prev = -np.inf
    for _ in range(max_iter):
        w1 = np.linalg.solve(c11, c12 @ w2)
        w1 /= np.sqrt(w1 @ c11 @ w1)
        w2 = np.linalg.solve(c22, c12.T @ w1)
        w2 /= np.sqrt(w2 @ c22 @ w2)
        rho = abs(np.corrcoef(w1 @ a, w2 @ b)[0, 1])
        if abs(rho - prev) < tol:
            break
        prev = rho
    return rho


def independent_trace_norm(h1, h2, r1):
    """Sum of singular values of the whitened cross-covariance, via scipy sqrtm."""
    m = h1.shape[1]
    a = h1 - h1.mean(axis=1, keepdims=True)
    b = h2 - h2.mean(axis=1, keepdims=True)
    c11 = a @ a.T / (m - 1) + r1 * np.eye(a.shape[0])
    c22 = b @ b.T / (m - 1) + r1 * np.eye(b.shape[0])
    c12 = a @ b.T / (m - 1)
    w1 = np.linalg.inv(np.real(scipy.linalg.sqrtm(c11)))
    w2 = np.linalg.inv(np.real(scipy.linalg.sqrtm(c22)))
    return scipy.linalg.svd(w1 @ c12 @ w2, compute_uv=False, lapack_driver="gesvd").sum()


def central_difference(f, x, step=1e-5):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += step
        down[idx] -= step
        grad[idx] = (f(up) - f(down)) / (2 * step)
    return grad


def rational_bin(m, max_count, n_bins):
    """Bin index by exact rational ceiling, with m = 0 folded into bin 1."""
    if m == 0:
        return 1
    q = Fraction(m, max_count) * n_bins
    return q.numerator // q.denominator + (q.numerator % q.denominator != 0)
