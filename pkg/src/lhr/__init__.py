"""Log-sum heuristic recovery of low-rank structure from corrupted data."""

__version__ = "0.1.0"

from .admm import SolverConfig, lrr_inner_solve, rpca_inner_solve, step_size  # noqa: E402
from .matcore import (  # noqa: E402
    SvdFactors,
    fro_norm,
    l1_norm,
    lhr_objective,
    logsum_norm,
    nuclear_norm,
    svd_full,
)
from .mm import RecoveryResult, lhr_solve_lrr, lhr_solve_rpca, lrr_solve, pcp_solve  # noqa: E402
from .prox import shrink_matrix, soft_threshold, svt  # noqa: E402
from .weights import WeightSet, error_weights, initial_weights, spectral_weights, weight_delta  # noqa: E402

__all__ = [
    "SolverConfig",
    "RecoveryResult",
    "SvdFactors",
    "WeightSet",
    "error_weights",
    "fro_norm",
    "initial_weights",
    "l1_norm",
    "lhr_objective",
    "lhr_solve_lrr",
    "lhr_solve_rpca",
    "logsum_norm",
    "lrr_inner_solve",
    "lrr_solve",
    "nuclear_norm",
    "pcp_solve",
    "rpca_inner_solve",
    "shrink_matrix",
    "soft_threshold",
    "spectral_weights",
    "step_size",
    "svd_full",
    "svt",
    "weight_delta",
]
