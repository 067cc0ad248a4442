"""Dense matrix helpers: validation, full SVD, norms and the log-sum objective.

Matrices are plain 2-D ``float64`` numpy arrays. Every public function checks
its inputs with :func:`as_matrix`, which rejects NaN/Inf entries.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from decimal import Decimal
from typing import Union

import numpy as np
import scipy.linalg

#: Relative Frobenius reconstruction tolerance for :func:`svd_full`.
SVD_RECON_TOL = 1e-10
#: Orthogonality tolerance for the singular bases.
SVD_ORTHO_TOL = 1e-10


class MatrixError(ValueError):
    """Malformed matrix input (wrong rank, non-finite entries, bad shape)."""


class SvdConvergenceError(ArithmeticError):
    """The LAPACK SVD backend failed to converge."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float64 array or raise :class:`MatrixError`."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise MatrixError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MatrixError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(arr)):
        raise MatrixError(f"{name} contains NaN or Inf entries")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands"):
    if a.shape != b.shape:
        raise MatrixError(f"shape mismatch between {what}: {a.shape} vs {b.shape}")


def _check_positive(value: float, name: str):
    if not (value > 0 and np.isfinite(value)):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class SvdFactors:
    """Full singular value decomposition ``m = U @ pad(s) @ V.T``.

    ``left`` is m x m, ``right`` is n x n (note: ``right`` holds V, not V^T),
    ``values`` has length min(m, n) and is non-increasing.
    """

    left: np.ndarray
    values: np.ndarray
    right: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.left.shape[0], self.right.shape[0]

    def sigma(self) -> np.ndarray:
        """The padded rectangular diagonal matrix of singular values."""
        m, n = self.shape
        out = np.zeros((m, n))
        k = len(self.values)
        out[np.arange(k), np.arange(k)] = self.values
        return out

    def reconstruct(self) -> np.ndarray:
        k = len(self.values)
        return (self.left[:, :k] * self.values) @ self.right[:, :k].T


def svd_full(m) -> SvdFactors:
    """Full SVD with square orthogonal bases.

    Raises
    ------
    SvdConvergenceError
        If the LAPACK divide-and-conquer driver and the fallback QR-iteration
        driver both fail to converge.
    """
    arr = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(arr, full_matrices=True)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails on badly scaled input where gesvd succeeds
        try:
            u, s, vt = scipy.linalg.svd(arr, full_matrices=True, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise SvdConvergenceError(f"SVD did not converge for {arr.shape} input") from exc
    return SvdFactors(left=u, values=np.maximum(s, 0.0), right=vt.T)


def singular_values(m) -> np.ndarray:
    arr = as_matrix(m)
    try:
        return np.linalg.svd(arr, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD did not converge for {arr.shape} input") from exc


def nuclear_norm(m) -> float:
    """Sum of singular values."""
    return float(np.sum(singular_values(m)))


def l1_norm(m) -> float:
    return float(np.sum(np.abs(as_matrix(m))))


def fro_norm(m) -> float:
    return float(np.linalg.norm(as_matrix(m), "fro"))


def logsum_norm(m, delta: float) -> float:
    """``sum_ij log(|m_ij| + delta)``; negative whenever entries are below ``1 - delta``."""
    _check_positive(delta, "delta")
    return float(np.sum(np.log(np.abs(as_matrix(m)) + delta)))


def lhr_objective(a, e, lam: float, delta1: float, delta2: float) -> float:
    """Log-sum heuristic objective up to an additive constant.

    ``sum_i log(sigma_i(a) + delta2) + lam * sum_ij log(|e_ij| + delta1)``

    The sum runs over the min(m, n) singular values of ``a``. The constant
    padding term of the log-determinant form is dropped since only differences
    between iterates are ever compared.
    """
    a = as_matrix(a, "a")
    e = as_matrix(e, "e")
    _check_same_shape(a, e, "a and e")
    _check_positive(lam, "lambda")
    _check_positive(delta1, "delta1")
    _check_positive(delta2, "delta2")
    spectral = float(np.sum(np.log(singular_values(a) + delta2)))
    return spectral + lam * logsum_norm(e, delta1)


def numerical_rank(m, rel_tol: float = 1e-6) -> int:
    """Count singular values above ``rel_tol * sigma_1``."""
    s = singular_values(m)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def cardinality(m, rel_tol: float = 1e-6) -> int:
    """Count entries with magnitude above ``rel_tol * max|m|``."""
    arr = np.abs(as_matrix(m))
    top = arr.max()
    if top == 0.0:
        return 0
    return int(np.sum(arr > rel_tol * top))


# -- matrix-csv ---------------------------------------------------------------

PathLike = Union[str, os.PathLike]


#: Minimum significant digits written to matrix-csv.
CSV_MIN_DIGITS = 12


def _format_entry(x) -> str:
    # shortest round-trip digits, zero-padded to CSV_MIN_DIGITS, positional
    sign, digits, exp = Decimal(repr(float(x))).as_tuple()
    pad = CSV_MIN_DIGITS - len(digits)
    if pad > 0:
        digits, exp = digits + (0,) * pad, exp - pad
    return format(Decimal((sign, digits, exp)), "f")


def format_matrix_csv(m) -> str:
    arr = as_matrix(m)
    buf = io.StringIO()
    for row in arr:
        buf.write(",".join(_format_entry(x) for x in row))
        buf.write("\n")
    return buf.getvalue()


def write_matrix_csv(path: PathLike, m) -> None:
    """Write one row per line, comma separated, no header."""
    text = format_matrix_csv(m)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def parse_matrix_csv(text: str, source: str = "<string>") -> np.ndarray:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        try:
            row = [float(c) for c in cells]
        except ValueError as exc:
            raise MatrixError(f"{source}:{lineno}: non-numeric cell ({exc})") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise MatrixError(
                f"{source}:{lineno}: expected {width} columns, found {len(row)}"
            )
        rows.append(row)
    if not rows:
        raise MatrixError(f"{source}: no data rows")
    return as_matrix(np.array(rows), source)


def read_matrix_csv(path: PathLike) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_matrix_csv(fh.read(), source=str(path))
