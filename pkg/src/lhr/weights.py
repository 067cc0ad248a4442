"""Reweighting step of the majorization-minimization loop.

Given the previous iterate ``(A, E)`` these build the weights of the convex
surrogate ``||W_Y A W_Z||_* + lam * ||W_E o E||_1``:

* ``W_E = (|E| + delta1)^-1`` entrywise,
* ``W_Y = (U S U^T + delta2 I)^-1/2`` and ``W_Z = (V S V^T + delta2 I)^-1/2``
  with ``A = U S V^T`` a *full* SVD, so directions outside the column/row
  space of ``A`` get weight ``delta2^-1/2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .matcore import MatrixError, as_matrix, svd_full


@dataclass(frozen=True)
class SpectralFactors:
    """Eigendecompositions ``W_Y = U diag(y) U^T`` and ``W_Z = V diag(z) V^T``."""

    left: np.ndarray
    left_diag: np.ndarray
    right: np.ndarray
    right_diag: np.ndarray


@dataclass(frozen=True)
class WeightSet:
    wY: np.ndarray
    wZ: np.ndarray
    wE: np.ndarray
    delta1: float
    delta2: float
    # Known eigendecompositions of wY/wZ; lets the solver take exact A-steps
    # without re-diagonalising. None means "compute on demand".
    factors: Optional[SpectralFactors] = None

    def spectral_factors(self) -> SpectralFactors:
        if self.factors is not None:
            return self.factors
        y, u = np.linalg.eigh((self.wY + self.wY.T) / 2)
        z, v = np.linalg.eigh((self.wZ + self.wZ.T) / 2)
        return SpectralFactors(u, y, v, z)

    def check(self, sigma_max: Optional[float] = None, tol: float = 1e-10) -> None:
        """Raise ``AssertionError`` if the set violates its invariants."""
        for name, w in (("wY", self.wY), ("wZ", self.wZ)):
            assert w.shape[0] == w.shape[1], f"{name} not square"
            assert np.max(np.abs(w - w.T)) <= tol, f"{name} not symmetric"
            lo = np.linalg.eigvalsh((w + w.T) / 2)[0]
            assert lo > 0, f"{name} not positive definite"
            if sigma_max is not None:
                bound = (sigma_max + self.delta2) ** -0.5
                assert lo >= bound * (1 - 1e-8), f"{name} smallest eigenvalue {lo} < {bound}"
        assert np.all(self.wE > 0), "wE must be entrywise positive"
        assert np.all(self.wE <= 1.0 / self.delta1 * (1 + 1e-12)), "wE entry above 1/delta1"


def _positive(value, name):
    if not (value > 0 and np.isfinite(value)):
        raise ValueError(f"{name} must be positive, got {value!r}")


def error_weights(e, delta1: float) -> np.ndarray:
    _positive(delta1, "delta1")
    return 1.0 / (np.abs(as_matrix(e, "e")) + delta1)


def spectral_factors(a, delta2: float) -> SpectralFactors:
    """Eigen-factors of the spectral weights generated by ``a``."""
    _positive(delta2, "delta2")
    f = svd_full(a)
    m, n = f.shape
    k = len(f.values)
    y = np.full(m, delta2 ** -0.5)
    z = np.full(n, delta2 ** -0.5)
    scaled = (f.values + delta2) ** -0.5
    y[:k] = scaled
    z[:k] = scaled
    return SpectralFactors(f.left, y, f.right, z)


def _assemble(basis: np.ndarray, diag: np.ndarray) -> np.ndarray:
    w = (basis * diag) @ basis.T
    return (w + w.T) / 2


def spectral_weights(a, delta2: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(wY, wZ)`` for the nuclear-norm term."""
    f = spectral_factors(a, delta2)
    return _assemble(f.left, f.left_diag), _assemble(f.right, f.right_diag)


def weights_from_iterate(a, e, delta1: float, delta2: float) -> WeightSet:
    """The full reweighting block applied to the iterate ``(a, e)``."""
    f = spectral_factors(a, delta2)
    return WeightSet(
        wY=_assemble(f.left, f.left_diag),
        wZ=_assemble(f.right, f.right_diag),
        wE=error_weights(e, delta1),
        delta1=float(delta1),
        delta2=float(delta2),
        factors=f,
    )


def initial_weights(rows: int, cols: int, cfg, spectral_shape=None) -> WeightSet:
    """First-iteration weights: identity spectral weights, ``E^0 = 1``.

    ``cfg`` only needs ``delta1`` and ``delta2`` attributes. ``spectral_shape``
    is the shape of the low-rank variable when it differs from the data shape
    (the n x n representation in LRR).
    """
    if cfg.delta1 is None or cfg.delta2 is None:
        raise ValueError("delta1/delta2 must be set; see lhr.mm.resolve_config")
    delta1, delta2 = float(cfg.delta1), float(cfg.delta2)
    _positive(delta2, "delta2")
    p, q = spectral_shape if spectral_shape is not None else (rows, cols)
    ones_p, ones_q = np.ones(p), np.ones(q)
    return WeightSet(
        wY=np.eye(p),
        wZ=np.eye(q),
        wE=error_weights(np.ones((rows, cols)), delta1),
        delta1=delta1,
        delta2=delta2,
        factors=SpectralFactors(np.eye(p), ones_p, np.eye(q), ones_q),
    )


def _stack(w: WeightSet, scope: str) -> np.ndarray:
    if scope == "all":
        return np.concatenate([w.wY.ravel(), w.wZ.ravel(), w.wE.ravel()])
    if scope == "error":
        return w.wE.ravel()
    raise ValueError(f"unknown weight scope {scope!r}")


def weight_delta(prev: WeightSet, nxt: WeightSet, scope: str = "all") -> float:
    """Relative Frobenius change ``||W' - W||_F / ||W||_F`` of the stacked weights.

    ``scope="error"`` restricts the statistic to ``wE``.
    """
    for name in ("wY", "wZ", "wE"):
        a, b = getattr(prev, name), getattr(nxt, name)
        if a.shape != b.shape:
            raise MatrixError(f"{name} shape changed: {a.shape} -> {b.shape}")
    before = _stack(prev, scope)
    after = _stack(nxt, scope)
    return float(np.linalg.norm(after - before) / np.linalg.norm(before))
