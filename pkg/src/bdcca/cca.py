"""Linear canonical correlation analysis via the whitened cross-covariance.

Functional routines take views as ``(dimension, samples)`` matrices, one
sample per column. The :class:`CCA` estimator follows scikit-learn and
takes ``(samples, features)``.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import SingularCovarianceError, check_paired_views

EIGEN_FLOOR = 1e-12


@dataclass
class CovarianceEstimate:
    c11: np.ndarray
    c22: np.ndarray
    c12: np.ndarray
    r1: float
    sample_count: int


@dataclass
class CcaSolution:
    a1: np.ndarray
    a2: np.ndarray
    correlations: np.ndarray
    k: int


def estimate_covariances(h1, h2, r1=1e-4):
    """Regularized covariance estimates of two mean-centred views.

    ``c11 = H1 H1' / (m - 1) + r1 I``, ``c12 = H1 H2' / (m - 1)`` and
    ``c22`` likewise, where ``m`` is the number of samples (columns).
    """
    if r1 < 0:
        raise ValueError(f"regularizer r1 must be >= 0, got {r1}")
    h1, h2 = check_paired_views(h1, h2)
    m = h1.shape[1]
    h1 = h1 - h1.mean(axis=1, keepdims=True)
    h2 = h2 - h2.mean(axis=1, keepdims=True)
    scale = 1.0 / (m - 1)
    c11 = scale * h1 @ h1.T + r1 * np.eye(h1.shape[0])
    c22 = scale * h2 @ h2.T + r1 * np.eye(h2.shape[0])
    c12 = scale * h1 @ h2.T
    return CovarianceEstimate(c11, c22, c12, r1, m)


def inv_sqrt(c, name="covariance"):
    """Symmetric inverse square root; refuses eigenvalues below 1e-12."""
    c = (c + c.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(c)
    if eigvals[0] <= EIGEN_FLOOR:
        raise SingularCovarianceError(
            f"{name} is singular or near-singular (min eigenvalue {eigvals[0]:.3e}); "
            "use a regularizer r1 > 0"
        )
    return (eigvecs / np.sqrt(eigvals)) @ eigvecs.T


def whitened_cross(cov):
    """``T = c11^{-1/2} c12 c22^{-1/2}``."""
    return inv_sqrt(cov.c11, "c11") @ cov.c12 @ inv_sqrt(cov.c22, "c22")


def cca_fit(x1, x2, k=None, r1=0.0):
    """Top-``k`` canonical projections and correlations of two views.

    Projections are ``a1 = c11^{-1/2} U_k`` and ``a2 = c22^{-1/2} V_k``
    where ``U, V`` are the singular vectors of the whitened cross-covariance.
    Each column of ``U_k`` is sign-fixed so that its largest-magnitude entry
    is positive, and ``V_k`` follows the same flip. Reported correlations
    are clamped to [0, 1].
    """
    cov = estimate_covariances(x1, x2, r1)
    n1, n2 = cov.c12.shape
    k = min(n1, n2) if k is None else k
    if not 1 <= k <= min(n1, n2):
        raise ValueError(f"k must be in [1, {min(n1, n2)}], got {k}")
    if cov.sample_count <= max(n1, n2):
        warnings.warn(
            f"only {cov.sample_count} samples for views of dimension {n1} and {n2}; "
            "covariance estimates will be rank deficient",
            RuntimeWarning,
        )
    w1 = inv_sqrt(cov.c11, "c11")
    w2 = inv_sqrt(cov.c22, "c22")
    u, s, vt = np.linalg.svd(w1 @ cov.c12 @ w2, full_matrices=False)
    u, s, v = u[:, :k], s[:k], vt[:k].T
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(k)])
    signs[signs == 0] = 1.0
    u, v = u * signs, v * signs
    return CcaSolution(w1 @ u, w2 @ v, np.clip(s, 0.0, 1.0), k)


def total_correlation(h1, h2, r1=1e-4):
    """Trace norm of the whitened cross-covariance (sum of all its singular values)."""
    return float(np.linalg.svd(whitened_cross(estimate_covariances(h1, h2, r1)),
                               compute_uv=False).sum())


class CCA(TransformerMixin, BaseEstimator):
    """Regularized linear CCA with a scikit-learn interface.

    Parameters
    ----------
    n_components : int or None
        Number of canonical pairs to keep; ``None`` keeps ``min(n1, n2)``.
    reg : float
        Ridge term ``r1`` added to both view covariances.

    Attributes
    ----------
    correlations_ : ndarray of shape (n_components,)
    weights_ : list of two ndarrays, shapes (n1, k) and (n2, k)
    means_ : list of two ndarrays
    """

    def __init__(self, n_components=None, reg=0.0):
        self.n_components = n_components
        self.reg = reg

    def fit(self, X1, X2, y=None):
        X1 = np.asarray(X1, dtype=np.float64)
        X2 = np.asarray(X2, dtype=np.float64)
        sol = cca_fit(X1.T, X2.T, self.n_components, self.reg)
        self.weights_ = [sol.a1, sol.a2]
        self.correlations_ = sol.correlations
        self.means_ = [X1.mean(axis=0), X2.mean(axis=0)]
        self.n_components_ = sol.k
        return self

    def transform(self, X1, X2=None):
        """Project one or both views; returns an array or a pair of arrays."""
        check_is_fitted(self, "weights_")
        z1 = (np.asarray(X1, dtype=np.float64) - self.means_[0]) @ self.weights_[0]
        if X2 is None:
            return z1
        z2 = (np.asarray(X2, dtype=np.float64) - self.means_[1]) @ self.weights_[1]
        return z1, z2

    def fit_transform(self, X1, X2, y=None):
        return self.fit(X1, X2).transform(X1, X2)

    def score(self, X1, X2):
        """Sum of the canonical correlations of the projected pair."""
        z1, z2 = self.transform(X1, X2)
        return float(sum(abs(np.corrcoef(z1[:, i], z2[:, i])[0, 1])
                         for i in range(self.n_components_)))
