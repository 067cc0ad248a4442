"""Outer majorization-minimization loop for log-sum heuristic recovery.

Every outer iteration rebuilds the weights from the previous iterate, solves
the weighted convex surrogate with an inner ADMM solver and records the
log-sum objective, which must not increase between iterations.

All solves run on ``P / s`` where ``s`` is a robust data scale (median absolute
entry by default). The log-sum penalty is not scale invariant, so fixing the
units keeps the default ``delta`` values meaningful across inputs and gives
the ``E^0 = 1`` initialisation a consistent meaning. Returned matrices are in
the caller's units; the objective trace is in normalised units.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .admm import (
    DivergenceError,
    InnerResult,
    SolverConfig,
    lrr_inner_solve,
    rpca_inner_solve,
)
from .matcore import as_matrix, cardinality, logsum_norm, numerical_rank, singular_values
from .weights import SpectralFactors, WeightSet, initial_weights, weight_delta, weights_from_iterate

logger = logging.getLogger(__name__)

#: Allowed objective increase between outer iterations before it is flagged.
MONOTONE_SLACK = 1e-9
#: Relative thresholds used to report rank(A) and card(E).
RANK_TOL = 1e-6
CARD_TOL = 1e-6


class SolveError(RuntimeError):
    """An inner solve failed; ``partial`` holds the traces gathered so far."""

    def __init__(self, message: str, partial: "RecoveryResult"):
        super().__init__(message)
        self.partial = partial


@dataclass
class RecoveryResult:
    a: np.ndarray
    e: np.ndarray
    method: str
    lam: float  # l1 weight seen by the inner solver, normalised units
    scale: float
    outer_iterations: int = 0
    objective_trace: list = field(default_factory=list)
    weight_delta_trace: list = field(default_factory=list)
    inner_iteration_counts: list = field(default_factory=list)
    inner_converged: list = field(default_factory=list)
    inner_residuals: list = field(default_factory=list)
    wall_time_per_outer: list = field(default_factory=list)
    monotonicity_violations: list = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    rank_of_a: int = 0
    card_of_e: int = 0
    config: Optional[SolverConfig] = None
    iterates: Optional[list] = None

    @property
    def monotone(self) -> bool:
        return not self.monotonicity_violations

    def to_manifest(self) -> dict:
        """JSON-ready summary; matrices are not included."""
        return {
            "method": self.method,
            "version": __version__,
            "config": self.config.to_dict() if self.config is not None else None,
            "lambda": self.lam,
            "scale": self.scale,
            "shape": {"a": list(self.a.shape), "e": list(self.e.shape)},
            "converged": self.converged,
            "stalled": self.stalled,
            "outer_iterations": self.outer_iterations,
            "objective_trace": list(self.objective_trace),
            "weight_delta_trace": list(self.weight_delta_trace),
            "inner_iteration_counts": list(self.inner_iteration_counts),
            "inner_converged": list(self.inner_converged),
            "inner_final_residuals": [r[-1] if r else None for r in self.inner_residuals],
            "wall_time_per_outer": list(self.wall_time_per_outer),
            "monotonicity_violations": [list(v) for v in self.monotonicity_violations],
            "rank_of_a": self.rank_of_a,
            "card_of_e": self.card_of_e,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_manifest(), **kwargs)


def data_scale(p: np.ndarray, mode="median") -> float:
    """Scale used to normalise ``P`` before solving.

    ``"median"`` (median absolute entry) ignores a minority of gross errors;
    falls back to the mean absolute entry, then 1, on degenerate input.
    """
    if not isinstance(mode, str):
        return float(mode)
    if mode == "none":
        return 1.0
    absp = np.abs(p)
    if mode == "median":
        s = float(np.median(absp))
        if s > 0:
            return s
    s = float(np.mean(absp))
    return s if s > 0 else 1.0


def surrogate_value(a, e, w: WeightSet, lam: float) -> float:
    """Weighted convex surrogate ``||W_Y A W_Z||_* + lam ||W_E o E||_1``."""
    return float(np.sum(singular_values(w.wY @ a @ w.wZ))) + lam * float(np.sum(w.wE * np.abs(e)))


def _objective(a, e, lam, delta1, delta2) -> float:
    # same quantity as matcore.lhr_objective, but allows the LRR shapes
    return float(np.sum(np.log(singular_values(a) + delta2))) + lam * logsum_norm(e, delta1)


def _identity_weights(a_shape, e_shape, delta1, delta2) -> WeightSet:
    p, q = a_shape
    return WeightSet(
        wY=np.eye(p),
        wZ=np.eye(q),
        wE=np.ones(e_shape),
        delta1=delta1,
        delta2=delta2,
        factors=SpectralFactors(np.eye(p), np.ones(p), np.eye(q), np.ones(q)),
    )


#: Default log-sum offsets (normalised units) for RPCA and LRR. In LRR the
#: singular values of the unitless representation are O(1).
RPCA_DELTAS = (0.3, 0.3)
LRR_DELTAS = (1.0, 1.0)


def resolve_config(cfg: SolverConfig, shape, lrr: bool) -> SolverConfig:
    """Fill the problem-dependent defaults ``lam``, ``delta1``, ``delta2``."""
    d1, d2 = LRR_DELTAS if lrr else RPCA_DELTAS
    lam = cfg.lam if cfg.lam is not None else (0.4 if lrr else 1.0 / np.sqrt(max(shape)))
    return cfg.replace(
        lam=float(lam),
        delta1=float(cfg.delta1 if cfg.delta1 is not None else d1),
        delta2=float(cfg.delta2 if cfg.delta2 is not None else d2),
    )


def absorbed_lambda(lam: float, delta1: float) -> float:
    """``lam`` with the constant first-iteration error weight folded in.

    ``pcp_solve`` with this value reproduces iteration 1 of ``lhr_solve_rpca``
    bit for bit: the inner solver forms ``lam * wE`` and here ``wE`` is the
    same float ``1 / (1 + delta1)``.
    """
    return lam * (1.0 / (1.0 + delta1))


def _inner_lambda(cfg: SolverConfig, pn: np.ndarray, lrr: bool) -> float:
    """Weight of the l1 term as passed to the inner solver.

    For LRR, ``A`` is unitless while ``E`` carries the units of ``P``, so the
    user-facing ``lam`` multiplies ``||E||_1 / ||P||_2``.
    """
    if lrr:
        s1 = float(np.linalg.norm(pn, 2))
        return cfg.lam / s1 if s1 > 0 else cfg.lam
    return cfg.lam


def _finish(result: RecoveryResult, a, e, scale: float, lrr: bool) -> RecoveryResult:
    result.a = a if lrr else a * scale
    result.e = e * scale
    result.rank_of_a = numerical_rank(result.a, RANK_TOL)
    result.card_of_e = cardinality(result.e, CARD_TOL)
    return result


def _run(p, cfg: SolverConfig, lrr: bool, keep_iterates: bool) -> RecoveryResult:
    p = as_matrix(p, "p")
    m, n = p.shape
    cfg = resolve_config(cfg, p.shape, lrr)
    scale = data_scale(p, cfg.scale)
    pn = p / scale
    lam = _inner_lambda(cfg, pn, lrr)
    inner_cfg = cfg.replace(lam=lam)
    solve = lrr_inner_solve if lrr else rpca_inner_solve
    a_shape = (n, n) if lrr else (m, n)

    result = RecoveryResult(
        a=np.zeros(a_shape), e=np.zeros_like(p), method="lhr-lrr" if lrr else "lhr",
        lam=lam, scale=scale, config=cfg,
        iterates=[] if keep_iterates else None,
    )
    w = initial_weights(m, n, cfg, spectral_shape=a_shape)
    warm = None
    a, e = result.a, result.e
    for t in range(1, cfg.outer_max_iters + 1):
        tic = time.perf_counter()
        try:
            inner: InnerResult = solve(pn, w, inner_cfg, warm_start=warm)
        except DivergenceError as exc:
            result.inner_residuals.append(exc.residuals)
            _finish(result, a, e, scale, lrr)
            raise SolveError(f"outer iteration {t}: {exc}", result) from exc
        if t > 1 and surrogate_value(inner.a, inner.e, w, lam) > surrogate_value(a, e, w, lam):
            # The inner solve ended above its own starting point on the
            # surrogate, so accepting it could raise the objective. Keeping
            # the previous iterate is a fixed point of the reweighting map.
            result.outer_iterations = t
            result.objective_trace.append(result.objective_trace[-1])
            result.weight_delta_trace.append(0.0)
            result.inner_iteration_counts.append(inner.iterations)
            result.inner_converged.append(inner.converged)
            result.inner_residuals.append(inner.residuals)
            result.wall_time_per_outer.append(time.perf_counter() - tic)
            result.stalled = True
            result.converged = True
            logger.info("outer %d: surrogate did not decrease, keeping previous iterate", t)
            break
        a, e = inner.a, inner.e
        obj = _objective(a, e, lam, cfg.delta1, cfg.delta2)
        if result.objective_trace:
            prev = result.objective_trace[-1]
            if obj > prev + MONOTONE_SLACK:
                result.monotonicity_violations.append((t, obj - prev))
                logger.warning("objective increased at outer iteration %d by %.3e", t, obj - prev)
        nxt = weights_from_iterate(a, e, cfg.delta1, cfg.delta2)
        delta = weight_delta(w, nxt, cfg.stop_scope)

        result.outer_iterations = t
        result.objective_trace.append(obj)
        result.weight_delta_trace.append(delta)
        result.inner_iteration_counts.append(inner.iterations)
        result.inner_converged.append(inner.converged)
        result.inner_residuals.append(inner.residuals)
        result.wall_time_per_outer.append(time.perf_counter() - tic)
        if keep_iterates:
            result.iterates.append((a * (1.0 if lrr else scale), e * scale))
        logger.debug("outer %d: objective %.6f, weight delta %.3e, %d sweeps",
                     t, obj, delta, inner.iterations)

        if delta < cfg.outer_tol:
            result.converged = True
            break
        w = nxt
        warm = inner.state if cfg.warm_start else None
    return _finish(result, a, e, scale, lrr)


def lhr_solve_rpca(p, cfg: Optional[SolverConfig] = None, keep_iterates: bool = False) -> RecoveryResult:
    """Recover ``P = A + E`` with low-rank ``A`` and sparse ``E`` by LHR.

    Iteration 1 uses identity spectral weights and ``W_E = (1 + delta1)^-1``,
    i.e. a PCP solve with ``lam / (1 + delta1)``. Later iterations reweight
    from the previous iterate. Stops when the relative weight change drops
    below ``cfg.outer_tol`` or after ``cfg.outer_max_iters`` iterations.

    Raises
    ------
    SolveError
        If an inner solve diverges; ``exc.partial`` carries the traces.
    """
    return _run(p, cfg or SolverConfig(), lrr=False, keep_iterates=keep_iterates)


def lhr_solve_lrr(p, cfg: Optional[SolverConfig] = None, keep_iterates: bool = False) -> RecoveryResult:
    """Low-rank representation ``P = P A + E`` by LHR; ``A`` is n x n."""
    return _run(p, cfg or SolverConfig(), lrr=True, keep_iterates=keep_iterates)


def _single_solve(p, cfg: SolverConfig, lrr: bool) -> RecoveryResult:
    p = as_matrix(p, "p")
    m, n = p.shape
    cfg = resolve_config(cfg, p.shape, lrr)
    scale = data_scale(p, cfg.scale)
    pn = p / scale
    lam = _inner_lambda(cfg, pn, lrr)
    inner_cfg = cfg.replace(lam=lam)
    a_shape = (n, n) if lrr else (m, n)
    w = _identity_weights(a_shape, p.shape, cfg.delta1, cfg.delta2)
    solve = lrr_inner_solve if lrr else rpca_inner_solve
    result = RecoveryResult(
        a=np.zeros(a_shape), e=np.zeros_like(p), method="lrr" if lrr else "pcp",
        lam=lam, scale=scale, config=cfg,
    )
    tic = time.perf_counter()
    try:
        inner = solve(pn, w, inner_cfg)
    except DivergenceError as exc:
        result.inner_residuals.append(exc.residuals)
        raise SolveError(str(exc), _finish(result, result.a, result.e, 1.0, True)) from exc
    result.outer_iterations = 1
    result.objective_trace.append(_objective(inner.a, inner.e, lam, cfg.delta1, cfg.delta2))
    result.inner_iteration_counts.append(inner.iterations)
    result.inner_converged.append(inner.converged)
    result.inner_residuals.append(inner.residuals)
    result.wall_time_per_outer.append(time.perf_counter() - tic)
    result.converged = inner.converged
    return _finish(result, inner.a, inner.e, scale, lrr)


def pcp_solve(p, cfg: Optional[SolverConfig] = None) -> RecoveryResult:
    """The l1-heuristic baseline ``min ||A||_* + lam ||E||_1 s.t. P = A + E``."""
    return _single_solve(p, cfg or SolverConfig(), lrr=False)


def lrr_solve(p, cfg: Optional[SolverConfig] = None) -> RecoveryResult:
    """Plain LRR with an l1 error term (identity weights, one solve)."""
    return _single_solve(p, cfg or SolverConfig(), lrr=True)
