"""Closed-form proximal operators for the l1 norm and the nuclear norm."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .matcore import MatrixError, SvdConvergenceError, as_matrix


def soft_threshold(y: float, alpha: float) -> float:
    """Scalar shrinkage ``sgn(y) * max(|y| - alpha, 0)``.

    This is the unique minimiser of ``alpha*|x| + (x - y)**2 / 2``.
    """
    if alpha < 0:
        raise ValueError(f"threshold must be non-negative, got {alpha}")
    return float(np.sign(y) * max(abs(y) - alpha, 0.0))


def _shrink(m: np.ndarray, alphas) -> np.ndarray:
    # unchecked kernel used inside the solver loops
    return np.sign(m) * np.maximum(np.abs(m) - alphas, 0.0)


def shrink_matrix(m, alphas) -> np.ndarray:
    """Entrywise soft-thresholding with a per-entry threshold matrix.

    ``alphas`` may also be a non-negative scalar.
    """
    m = as_matrix(m)
    if np.isscalar(alphas):
        alphas = float(alphas)
        if alphas < 0:
            raise ValueError("thresholds must be non-negative")
    else:
        alphas = as_matrix(alphas, "alphas")
        if alphas.shape != m.shape:
            raise MatrixError(f"threshold shape {alphas.shape} != matrix shape {m.shape}")
        if np.any(alphas < 0):
            raise ValueError("thresholds must be non-negative")
    return _shrink(m, alphas)


def _svt(m: np.ndarray, alpha: float) -> tuple[np.ndarray, int]:
    try:
        u, s, vt = scipy.linalg.svd(m, full_matrices=False, check_finite=False)
    except np.linalg.LinAlgError:
        try:
            u, s, vt = scipy.linalg.svd(
                m, full_matrices=False, check_finite=False, lapack_driver="gesvd"
            )
        except np.linalg.LinAlgError as exc:
            raise SvdConvergenceError(f"SVD did not converge for {m.shape} input") from exc
    s = s - alpha
    r = int(np.count_nonzero(s > 0))
    return (u[:, :r] * s[:r]) @ vt[:r], r


def svt(m, alpha: float) -> np.ndarray:
    """Singular value thresholding ``U s_alpha(S) V^T``.

    Minimises ``alpha*||X||_* + ||X - m||_F**2 / 2``. Singular values equal to
    ``alpha`` are zeroed.
    """
    if alpha < 0:
        raise ValueError(f"threshold must be non-negative, got {alpha}")
    out, _ = _svt(as_matrix(m), float(alpha))
    return out
