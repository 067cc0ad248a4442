"""Planted low-rank + sparse instances and the feasible-region scan."""

from __future__ import annotations

import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .admm import SolverConfig
from .matcore import MatrixError, as_matrix
from .mm import SolveError, lhr_solve_rpca, pcp_solve

logger = logging.getLogger(__name__)

#: A cell is feasible when its median relative error is at most this.
FEASIBLE_TOL = 0.01
PHASE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PlantedInstance:
    p: np.ndarray
    a_star: np.ndarray
    e_star: np.ndarray
    rank_rate: float
    error_rate: float
    seed: object


def gen_low_rank(rows: int, cols: int, rank: int, seed) -> np.ndarray:
    """``X @ Y.T`` with standard normal factors of width ``rank``."""
    if not 0 <= rank <= min(rows, cols):
        raise ValueError(f"rank {rank} outside [0, {min(rows, cols)}]")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rows, rank))
    y = rng.standard_normal((cols, rank))
    return x @ y.T


def error_count(rows: int, cols: int, error_rate: float) -> int:
    # guard against 0.29 * 100 == 28.999999999999996
    return int(math.floor(error_rate * rows * cols + 1e-9))


def gen_sparse_errors(rows: int, cols: int, error_rate: float, seed, magnitude: float = 100.0) -> np.ndarray:
    """``floor(rate * rows * cols)`` uniformly placed entries, values U[-100, 100]."""
    if not 0.0 <= error_rate <= 1.0:
        raise ValueError(f"error rate {error_rate} outside [0, 1]")
    rng = np.random.default_rng(seed)
    count = error_count(rows, cols, error_rate)
    out = np.zeros(rows * cols)
    support = rng.choice(rows * cols, size=count, replace=False)
    values = rng.uniform(-magnitude, magnitude, size=count)
    # a draw of exactly 0.0 would silently shrink the support
    values[values == 0.0] = magnitude
    out[support] = values
    return out.reshape(rows, cols)


def planted_rank(rows: int, cols: int, rank_rate: float) -> int:
    return min(int(math.floor(rank_rate * max(rows, cols) + 0.5)), min(rows, cols))


def planted_instance(rows: int, cols: int, rank: int, error_rate: float, seed) -> PlantedInstance:
    """``P = A* + E*`` with ``rank(A*) = rank``; ``seed`` feeds a SeedSequence."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    low_seed, err_seed = ss.spawn(2)
    a_star = gen_low_rank(rows, cols, rank, low_seed)
    e_star = gen_sparse_errors(rows, cols, error_rate, err_seed)
    rate = rank / max(rows, cols) if max(rows, cols) else 0.0
    return PlantedInstance(a_star + e_star, a_star, e_star, rate, error_rate, seed)


def make_instance(rows: int, cols: int, rank_rate: float, error_rate: float, seed) -> PlantedInstance:
    """``P = A* + E*`` with rank ``round(rank_rate * max(rows, cols))``."""
    if not 0.0 <= rank_rate <= 1.0:
        raise ValueError(f"rank rate {rank_rate} outside [0, 1]")
    inst = planted_instance(rows, cols, planted_rank(rows, cols, rank_rate), error_rate, seed)
    return PlantedInstance(inst.p, inst.a_star, inst.e_star, rank_rate, error_rate, seed)


def relative_error(a, a_star) -> float:
    """``||a - a*||_F / ||a*||_F``; ``inf`` when ``a* = 0`` but ``a != 0``."""
    a = as_matrix(a, "a")
    a_star = as_matrix(a_star, "a_star")
    if a.shape != a_star.shape:
        raise MatrixError(f"shape mismatch {a.shape} vs {a_star.shape}")
    ref = np.linalg.norm(a_star)
    diff = np.linalg.norm(a - a_star)
    if ref == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return float(diff / ref)


# -- feasible-region scan -------------------------------------------------------


@dataclass
class PhaseGrid:
    eta_values: np.ndarray
    xi_values: np.ndarray
    median_rel_error: np.ndarray  # (len(eta), len(xi))
    trial_errors: np.ndarray  # (len(eta), len(xi), trials)
    trials: int
    method: str
    rows: int
    cols: int
    seed: int

    @property
    def feasible(self) -> np.ndarray:
        return self.median_rel_error <= FEASIBLE_TOL

    def feasible_cells(self) -> set[tuple[float, float]]:
        ii, jj = np.nonzero(self.feasible)
        return {(float(self.eta_values[i]), float(self.xi_values[j])) for i, j in zip(ii, jj)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# phase-grid v{PHASE_FORMAT_VERSION} method={self.method}\n")
        buf.write("eta,xi,median_rel_error,feasible\n")
        for i, eta in enumerate(self.eta_values):
            for j, xi in enumerate(self.xi_values):
                err = float(self.median_rel_error[i, j])
                buf.write(f"{float(eta)!r},{float(xi)!r},{err!r},{int(err <= FEASIBLE_TOL)}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        def enc(x):
            return None if not np.isfinite(x) else float(x)

        return {
            "format_version": PHASE_FORMAT_VERSION,
            "version": __version__,
            "method": self.method,
            "rows": self.rows,
            "cols": self.cols,
            "trials": self.trials,
            "seed": self.seed,
            "eta_values": [float(v) for v in self.eta_values],
            "xi_values": [float(v) for v in self.xi_values],
            "median_rel_error": [[enc(x) for x in row] for row in self.median_rel_error],
            "trial_errors": [[[enc(x) for x in cell] for cell in row] for row in self.trial_errors],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def grid_values(step: float) -> np.ndarray:
    """``0, step, ..., 1``; ``step`` must divide 1."""
    if not (step > 0 and step <= 1):
        raise ValueError(f"grid step must be in (0, 1], got {step}")
    count = round(1.0 / step)
    if abs(count * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} does not divide [0, 1]")
    return np.round(np.arange(count + 1) * step, 12)


_SOLVERS = {"lhr": lhr_solve_rpca, "pcp": pcp_solve}


def run_trial(rows, cols, eta, xi, seed_words, method, cfg) -> float:
    inst = make_instance(rows, cols, eta, xi, np.random.SeedSequence(seed_words))
    try:
        res = _SOLVERS[method](inst.p, cfg)
    except (SolveError, ArithmeticError, np.linalg.LinAlgError) as exc:
        logger.info("trial %s failed: %s", seed_words, exc)
        return math.inf
    return relative_error(res.a, inst.a_star)


def _run_cell(args) -> tuple[int, int, list[float]]:
    i, j, rows, cols, eta, xi, trials, method, cfg, seed = args
    errs = [run_trial(rows, cols, eta, xi, [seed, i, j, t], method, cfg) for t in range(trials)]
    return i, j, errs


def phase_scan(
    rows: int,
    cols: int,
    eta_step: float,
    xi_step: float,
    trials: int,
    method: str,
    cfg: Optional[SolverConfig] = None,
    seed: int = 0,
    workers: int = 1,
    progress=None,
) -> PhaseGrid:
    """Median recovery error over a grid of rank rates and error rates.

    Trial ``t`` of cell ``(i, j)`` draws its instance from the seed words
    ``[seed, i, j, t]``, so the grid is reproducible whatever ``workers`` is.
    Solver failures count as trials with infinite error.
    """
    if method not in _SOLVERS:
        raise ValueError(f"method must be one of {sorted(_SOLVERS)}, got {method!r}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = cfg or SolverConfig()
    etas, xis = grid_values(eta_step), grid_values(xi_step)
    jobs = [
        (i, j, rows, cols, float(eta), float(xi), trials, method, cfg, seed)
        for i, eta in enumerate(etas)
        for j, xi in enumerate(xis)
    ]
    errors = np.full((len(etas), len(xis), trials), math.inf)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_run_cell, jobs, chunksize=1)
            for done, (i, j, errs) in enumerate(results, start=1):
                errors[i, j] = errs
                if progress:
                    progress(done, len(jobs))
    else:
        for done, job in enumerate(jobs, start=1):
            i, j, errs = _run_cell(job)
            errors[i, j] = errs
            if progress:
                progress(done, len(jobs))
    return PhaseGrid(
        eta_values=etas,
        xi_values=xis,
        median_rel_error=np.median(errors, axis=2),
        trial_errors=errors,
        trials=trials,
        method=method,
        rows=rows,
        cols=cols,
        seed=seed,
    )
