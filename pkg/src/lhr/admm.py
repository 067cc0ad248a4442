"""Inner convex solvers for the reweighted nuclear + l1 program.

Both solvers minimise ``||W_Y A W_Z||_* + lam * ||W_E o E||_1`` under a linear
constraint, splitting the weighted nuclear term with ``J = W_Y A W_Z`` and
running alternating-direction sweeps on the augmented Lagrangian

    ||J||_* + lam ||W_E o E||_1 + <C1, h1> + <C2, h2> + mu/2 (||h1||^2 + ||h2||^2)

with ``h2 = J - W_Y A W_Z`` and ``h1 = P - A - E`` (RPCA) or
``h1 = P - P A - E`` (LRR).  Each sweep updates E (shrinkage), J (singular
value thresholding), A (least squares), then the multipliers, and grows
``mu`` by ``rho``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .matcore import MatrixError, as_matrix
from .prox import _shrink, _svt
from .weights import WeightSet

#: Residual growth factor (relative to the best residual seen) treated as divergence.
DIVERGENCE_FACTOR = 1e3
_EPS = 1e-12


class DivergenceError(RuntimeError):
    """Raised when the inner residual blows up; carries the residual trace."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class SolverConfig:
    """Tunables of the LHR solvers.

    Fields left as ``None`` are resolved per problem: ``lam`` to
    ``1/sqrt(max(m, n))`` for RPCA and ``0.4`` for LRR, ``delta1``/``delta2``
    to 0.3 for RPCA and 1.0 for LRR, ``mu0`` to ``1.25 / sigma_1(P)``.

    ``delta1``/``delta2`` are expressed in units of the data scale chosen by
    ``scale`` (see :func:`lhr.mm.data_scale`); with ``scale="none"`` they are
    absolute.
    """

    lam: Optional[float] = None
    delta1: Optional[float] = None
    delta2: Optional[float] = None
    mu0: Optional[float] = None
    rho: float = 1.1
    gamma: Union[str, float] = "auto"
    a_step: str = "exact"
    inner_tol: float = 1e-7
    inner_max_iters: int = 500
    outer_tol: float = 1e-5
    outer_max_iters: int = 10
    warm_start: bool = True
    stop_scope: str = "all"
    scale: Union[str, float] = "median"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def pos(name, allow_none=False):
            v = getattr(self, name)
            if v is None and allow_none:
                return
            if not (isinstance(v, (int, float)) and np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive number, got {v!r}")

        for name in ("lam", "mu0", "delta1", "delta2"):
            pos(name, allow_none=True)
        for name in ("inner_tol", "outer_tol"):
            pos(name)
        if not self.rho > 1:
            raise ValueError(f"rho must exceed 1, got {self.rho!r}")
        if self.gamma != "auto":
            if not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
                raise ValueError(f"gamma must be 'auto' or a positive number, got {self.gamma!r}")
        if self.a_step not in ("exact", "gradient"):
            raise ValueError(f"a_step must be 'exact' or 'gradient', got {self.a_step!r}")
        for name in ("inner_max_iters", "outer_max_iters"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.stop_scope not in ("all", "error"):
            raise ValueError(f"stop_scope must be 'all' or 'error', got {self.stop_scope!r}")
        if isinstance(self.scale, str):
            if self.scale not in ("median", "mean", "none"):
                raise ValueError(f"unknown scale mode {self.scale!r}")
        elif not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale!r}")

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class InnerState:
    a: np.ndarray
    e: np.ndarray
    j: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    mu: float
    iteration: int = 0


@dataclass
class InnerResult:
    a: np.ndarray
    e: np.ndarray
    residuals: list[float]
    iterations: int
    converged: bool
    state: InnerState = field(repr=False)


def top_singular_value(m: np.ndarray) -> float:
    return float(np.linalg.norm(m, 2))


def step_size(
    w: WeightSet,
    mode: Union[str, float] = "auto",
    operator_norm_p: Optional[float] = None,
) -> float:
    """Gradient step for the A-subproblem.

    ``auto`` returns ``1/(L + 1e-12)`` where ``L`` bounds the Lipschitz
    constant of the quadratic's gradient: ``2(1 + |W_Y|^2 |W_Z|^2)`` for RPCA,
    or ``2(|P|^2 + |W_Y|^2 |W_Z|^2)`` for LRR when ``operator_norm_p`` is
    given.
    """
    if mode != "auto":
        return float(mode)
    f = w.factors
    if f is not None:
        sy, sz = float(np.max(np.abs(f.left_diag))), float(np.max(np.abs(f.right_diag)))
    else:
        sy, sz = top_singular_value(w.wY), top_singular_value(w.wZ)
    data = 1.0 if operator_norm_p is None else float(operator_norm_p) ** 2
    lip = 2.0 * (data + sy**2 * sz**2)
    return 1.0 / (lip + _EPS)


class _ExactAStep:
    """Closed-form minimiser of ``||X1 - M A||^2 + ||X2 - W_Y A W_Z||^2``.

    Normal equations ``M'M A + W_Y^2 A W_Z^2 = R``. Substituting
    ``A = W_Y^-1 B`` gives the Sylvester form ``S B + B W_Z^2 = W_Y^-1 R``
    with symmetric ``S = W_Y^-1 M'M W_Y^-1``; both sides diagonalise once per
    inner solve.
    """

    def __init__(self, w: WeightSet, gram: Optional[np.ndarray]):
        f = w.spectral_factors()
        if gram is None:
            # M = I: S = W_Y^-2 shares W_Y's eigenbasis
            self.left = f.left
            self.right = f.right
            self.denom = 1.0 + np.outer(f.left_diag**2, f.right_diag**2)
            self.t = None
        else:
            inv_y = (f.left / f.left_diag) @ f.left.T
            s_mat = inv_y @ gram @ inv_y
            s_vals, q = np.linalg.eigh((s_mat + s_mat.T) / 2)
            self.t = inv_y @ q
            self.right = f.right
            self.denom = np.maximum(s_vals, 0.0)[:, None] + (f.right_diag**2)[None, :]

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        if self.t is None:
            core = (self.left.T @ rhs @ self.right) / self.denom
            return self.left @ core @ self.right.T
        core = (self.t.T @ rhs @ self.right) / self.denom
        return self.t @ core @ self.right.T


def _check_weights(w: WeightSet, a_shape, e_shape):
    if w.wE.shape != e_shape:
        raise MatrixError(f"wE shape {w.wE.shape} does not match data shape {e_shape}")
    if w.wY.shape != (a_shape[0], a_shape[0]) or w.wZ.shape != (a_shape[1], a_shape[1]):
        raise MatrixError(
            f"spectral weights {w.wY.shape}/{w.wZ.shape} incompatible with A shape {a_shape}"
        )


def _inner_solve(
    p: np.ndarray,
    w: WeightSet,
    cfg: SolverConfig,
    lam: float,
    mu0: float,
    warm_start: Optional[InnerState],
    lrr: bool,
) -> InnerResult:
    m, n = p.shape
    a_shape = (n, n) if lrr else (m, n)
    _check_weights(w, a_shape, p.shape)

    if warm_start is not None:
        a = np.array(warm_start.a, dtype=np.float64)
        e = np.array(warm_start.e, dtype=np.float64)
        if a.shape != a_shape or e.shape != p.shape:
            raise MatrixError("warm start shapes do not match the problem")
    else:
        a = np.zeros(a_shape)
        e = np.zeros_like(p)
    c1 = np.zeros_like(p)
    c2 = np.zeros(a_shape)
    j = np.zeros(a_shape)
    mu = float(mu0)

    wy, wz = w.wY, w.wZ
    lam_we = lam * w.wE
    norm_p = float(np.linalg.norm(p))
    if norm_p == 0.0:
        norm_p = 1.0

    pt = p.T if lrr else None
    if cfg.a_step == "exact":
        solve_a = _ExactAStep(w, pt @ p if lrr else None)
        gamma = None
    else:
        solve_a = None
        gamma = step_size(w, cfg.gamma, top_singular_value(p) if lrr else None)

    def apply_p(x):
        return p @ x if lrr else x

    residuals: list[float] = []
    best = None
    best_res = np.inf
    converged = False
    k = 0
    waw = wy @ a @ wz
    for k in range(1, cfg.inner_max_iters + 1):
        e = _shrink(p - apply_p(a) + c1 / mu, lam_we / mu)
        j, _ = _svt(waw - c2 / mu, 1.0 / mu)
        if solve_a is not None:
            x1 = p - e + c1 / mu
            x2 = j + c2 / mu
            rhs = (pt @ x1 if lrr else x1) + wy @ x2 @ wz
            a = solve_a(rhs)
        else:
            g1 = p - apply_p(a) - e + c1 / mu
            g2 = j - waw + c2 / mu
            a = a + gamma * ((pt @ g1 if lrr else g1) + wy @ g2 @ wz)
        h1 = p - apply_p(a) - e
        waw = wy @ a @ wz
        h2 = j - waw
        c1 = c1 + mu * h1
        c2 = c2 + mu * h2
        mu = mu * cfg.rho

        res = max(float(np.linalg.norm(h1)), float(np.linalg.norm(h2))) / norm_p
        residuals.append(res)
        if not np.isfinite(res) or res > DIVERGENCE_FACTOR * max(best_res, cfg.inner_tol):
            raise DivergenceError(
                f"inner residual diverged at sweep {k}: {res:.3e} (best {best_res:.3e})",
                residuals,
            )
        if res < best_res:
            best_res = res
            best = (a, e, j)
        if res < cfg.inner_tol:
            converged = True
            break

    if not converged and best is not None:
        a, e, j = best
    state = InnerState(a=a, e=e, j=j, c1=c1, c2=c2, mu=mu, iteration=k)
    return InnerResult(a=a, e=e, residuals=residuals, iterations=k, converged=converged, state=state)


def default_mu0(p: np.ndarray) -> float:
    s1 = top_singular_value(p)
    return 1.25 / s1 if s1 > 0 else 1.25


def rpca_inner_solve(
    p,
    w: WeightSet,
    cfg: SolverConfig,
    warm_start: Optional[InnerState] = None,
) -> InnerResult:
    """Reweighted PCP: ``min ||W_Y A W_Z||_* + lam ||W_E o E||_1  s.t. P = A + E``.

    ``warm_start`` seeds ``(A, E)``; multipliers and ``mu`` always restart.
    Stops when ``max(||h1||, ||h2||) / ||P|| < cfg.inner_tol``; otherwise the
    lowest-residual iterate is returned with ``converged=False``.

    Raises
    ------
    DivergenceError
        If the residual grows beyond ``1e3`` times its best value.
    """
    p = as_matrix(p, "p")
    lam = cfg.lam if cfg.lam is not None else 1.0 / np.sqrt(max(p.shape))
    mu0 = cfg.mu0 if cfg.mu0 is not None else default_mu0(p)
    return _inner_solve(p, w, cfg, lam, mu0, warm_start, lrr=False)


def lrr_inner_solve(
    p,
    w: WeightSet,
    cfg: SolverConfig,
    warm_start: Optional[InnerState] = None,
) -> InnerResult:
    """Reweighted LRR: ``min ||W_Y A W_Z||_* + lam ||W_E o E||_1  s.t. P = P A + E``.

    ``A`` is the n x n representation of the n columns of ``P``; ``wY`` and
    ``wZ`` must be n x n and ``wE`` the shape of ``P``.
    """
    p = as_matrix(p, "p")
    lam = cfg.lam if cfg.lam is not None else 0.4
    mu0 = cfg.mu0 if cfg.mu0 is not None else default_mu0(p)
    return _inner_solve(p, w, cfg, lam, mu0, warm_start, lrr=True)
