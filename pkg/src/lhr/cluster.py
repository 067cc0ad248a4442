"""Subspace clustering on top of the LRR solvers, plus stock-series preprocessing."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import date
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .admm import SolverConfig
from .matcore import MatrixError, as_matrix
from .mm import RecoveryResult, lhr_solve_lrr, lrr_solve

logger = logging.getLogger(__name__)

#: k-means restarts; fixed so results depend only on the seed.
KMEANS_RESTARTS = 20
#: Largest k for which the label matching is searched exhaustively.
EXACT_MATCH_MAX_K = 8
DEFAULT_WINDOW = 20
DEFAULT_PCA_DIMS = 5


class StockCsvError(MatrixError):
    """Malformed stock price file."""


@dataclass
class LabeledDataset:
    points: np.ndarray  # columns are samples
    labels: Optional[np.ndarray]
    k: int

    def __post_init__(self):
        self.points = as_matrix(self.points, "points")
        n = self.points.shape[1]
        if self.k < 1 or n < self.k:
            raise ValueError(f"need 1 <= k <= number of samples ({n}), got k={self.k}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError(f"expected {n} labels, got shape {self.labels.shape}")
            if self.labels.min() < 0 or self.labels.max() >= self.k:
                raise ValueError(f"labels must lie in [0, {self.k})")


@dataclass
class ClusterResult:
    assignments: np.ndarray
    affinity: np.ndarray
    error_rate: Optional[float] = None
    isolated: list = field(default_factory=list)
    recovery: Optional[RecoveryResult] = None


def affinity_from_representation(a) -> np.ndarray:
    """Symmetric affinity ``(|A| + |A^T|) / 2`` with a zero diagonal."""
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise MatrixError(f"representation must be square, got {a.shape}")
    absa = np.abs(a)
    m = (absa + absa.T) / 2
    np.fill_diagonal(m, 0.0)
    return m


def _spectral_cluster(affinity: np.ndarray, k: int, seed, points=None):
    n = affinity.shape[0]
    if k == 1:
        return np.zeros(n, dtype=np.int64), []
    deg = affinity.sum(axis=1)
    isolated = np.flatnonzero(deg <= 0)
    active = np.flatnonzero(deg > 0)
    if len(active) < k:
        raise ValueError(f"only {len(active)} connected samples for k={k} clusters")

    w = affinity[np.ix_(active, active)]
    d = deg[active] ** -0.5
    lap = np.eye(len(active)) - d[:, None] * w * d[None, :]
    _, vecs = np.linalg.eigh((lap + lap.T) / 2)
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)

    km = KMeans(n_clusters=k, n_init=KMEANS_RESTARTS, random_state=seed)
    labels = np.empty(n, dtype=np.int64)
    labels[active] = km.fit_predict(emb)

    if len(isolated):
        if points is not None:
            # nearest cluster mean in the original sample space
            pts = as_matrix(points, "points")
            centers = np.stack([pts[:, active[labels[active] == c]].mean(axis=1) for c in range(k)])
            dist = ((pts[:, isolated].T[:, None, :] - centers[None]) ** 2).sum(axis=2)
            labels[isolated] = np.argmin(dist, axis=1)
        else:
            labels[isolated] = np.bincount(labels[active], minlength=k).argmax()
        logger.info("%d isolated samples assigned after clustering", len(isolated))
    return labels, [int(i) for i in isolated]


def spectral_cluster(affinity, k: int, seed=0, points=None) -> np.ndarray:
    """Normalized-cut clustering of a non-negative symmetric affinity.

    Embeds samples with the ``k`` bottom eigenvectors of
    ``I - D^-1/2 W D^-1/2``, unit-normalizes the rows and runs k-means with
    20 restarts. Zero-degree samples are left out of the embedding and then
    joined to the nearest cluster mean of ``points`` (columns), or to the
    largest cluster when no points are given.
    """
    affinity = as_matrix(affinity, "affinity")
    if affinity.shape[0] != affinity.shape[1]:
        raise MatrixError(f"affinity must be square, got {affinity.shape}")
    if np.any(affinity < 0):
        raise ValueError("affinity must be non-negative")
    if not 1 <= k <= affinity.shape[0]:
        raise ValueError(f"k must be in [1, {affinity.shape[0]}], got {k}")
    labels, _ = _spectral_cluster((affinity + affinity.T) / 2, k, seed, points)
    return labels


def clustering_error(assignments, labels, k: Optional[int] = None) -> float:
    """Fraction of samples misassigned under the best label matching.

    Exhaustive over all bijections for ``k <= 8``, Hungarian assignment above.
    """
    x = np.asarray(assignments, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"assignments {x.shape} and labels {y.shape} must be equal-length vectors")
    if x.size == 0:
        return 0.0
    if min(x.min(), y.min()) < 0:
        raise ValueError("cluster indices must be non-negative")
    if k is None:
        k = int(max(x.max(), y.max())) + 1
    if max(x.max(), y.max()) >= k:
        raise ValueError(f"cluster indices must be below k={k}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (x, y), 1)
    if k <= EXACT_MATCH_MAX_K:
        idx = np.arange(k)
        best = max(int(counts[idx, perm].sum()) for perm in itertools.permutations(range(k)))
    else:
        rows, cols = linear_sum_assignment(counts, maximize=True)
        best = int(counts[rows, cols].sum())
    return 1.0 - best / x.size


def cluster_points(
    points,
    k: int,
    labels=None,
    cfg: Optional[SolverConfig] = None,
    seed=0,
    weighted: bool = True,
) -> ClusterResult:
    """LRR representation, affinity and spectral clustering of the columns.

    ``weighted=False`` runs a single identity-weight LRR solve instead of the
    log-sum reweighting.
    """
    ds = LabeledDataset(points, labels, k)
    solver = lhr_solve_lrr if weighted else lrr_solve
    rec = solver(ds.points, cfg)
    aff = affinity_from_representation(rec.a)
    if k > 1 and np.count_nonzero(aff.sum(axis=1) > 0) < k:
        raise ValueError("representation has too few connected samples to cluster")
    assignments, isolated = _spectral_cluster(aff, k, seed, ds.points)
    err = clustering_error(assignments, ds.labels, k) if ds.labels is not None else None
    return ClusterResult(assignments, aff, err, isolated, rec)


# -- planted subspaces -------------------------------------------------------


def planted_subspaces(
    n_subspaces: int = 5,
    dim: int = 5,
    ambient: int = 50,
    points_per: int = 20,
    corruption: float = 0.0,
    noise: float = 3.0,
    seed=0,
) -> LabeledDataset:
    """Samples from random subspaces, optionally with gross entry errors.

    Each subspace has an orthonormal basis drawn from a Gaussian matrix and
    standard normal coefficients. A ``corruption`` fraction of the entries,
    placed uniformly, receive additive Gaussian errors whose standard
    deviation is ``noise`` times that of the clean data.
    """
    if n_subspaces * dim > ambient:
        logger.warning("subspaces are not independent: %d x %d > %d", n_subspaces, dim, ambient)
    if not 0.0 <= corruption <= 1.0:
        raise ValueError(f"corruption {corruption} outside [0, 1]")
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(n_subspaces):
        basis, _ = np.linalg.qr(rng.standard_normal((ambient, dim)))
        blocks.append(basis @ rng.standard_normal((dim, points_per)))
    x = np.hstack(blocks)
    labels = np.repeat(np.arange(n_subspaces), points_per)
    count = int(math.floor(corruption * x.size + 1e-9))
    if count:
        flat = x.ravel()
        pos = rng.choice(x.size, size=count, replace=False)
        flat[pos] += rng.standard_normal(count) * noise * float(x.std())
    return LabeledDataset(x, labels, n_subspaces)


# -- stock preprocessing -----------------------------------------------------


def normalize_series(prices, alpha: int = DEFAULT_WINDOW, drop_prefix: bool = False):
    """Rolling z-score of each column over the window ``[t - alpha, t]``.

    Windows are truncated at the start of the series (population standard
    deviation). Entries whose window is constant are set to 0. With
    ``drop_prefix`` the first ``alpha`` rows, whose windows are short, are
    dropped instead.

    Returns
    -------
    normalized : ndarray
    flagged : ndarray of bool
        Entries that had a zero window deviation.
    """
    x = as_matrix(prices, "prices")
    if not (isinstance(alpha, (int, np.integer)) and alpha >= 1):
        raise ValueError(f"window length must be a positive integer, got {alpha!r}")
    mean = np.empty_like(x)
    var = np.empty_like(x)
    for t in range(x.shape[0]):
        win = x[max(t - alpha, 0) : t + 1]
        mean[t] = win.mean(axis=0)
        var[t] = np.mean((win - mean[t]) ** 2, axis=0)
    sd = np.sqrt(var)
    flagged = sd <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    out = np.where(flagged, 0.0, (x - mean) / np.where(flagged, 1.0, sd))
    if drop_prefix:
        out, flagged = out[alpha:], flagged[alpha:]
    return out, flagged


def pca_reduce(points, dims: int = DEFAULT_PCA_DIMS) -> np.ndarray:
    """Project column samples onto the top ``dims`` principal directions.

    Rows are features; each feature is centered over the samples, and the
    result is ``U_dims^T X_centered`` (``dims`` x samples).
    """
    x = as_matrix(points, "points")
    if not 1 <= dims <= min(x.shape):
        raise ValueError(f"dims must be in [1, {min(x.shape)}], got {dims}")
    xc = x - x.mean(axis=1, keepdims=True)
    u, _, _ = np.linalg.svd(xc, full_matrices=False)
    return u[:, :dims].T @ xc


@dataclass
class StockTable:
    dates: list
    assets: list
    prices: np.ndarray  # time x assets


def parse_stock_csv(text: str, source: str = "<string>") -> StockTable:
    """Header ``date,ID1,ID2,...``; one row per ISO-8601 date; no missing cells."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise StockCsvError(f"{source}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise StockCsvError(f"{source}: row 1: header needs a date column and at least one asset")
    assets = header[1:]
    if any(not a for a in assets):
        raise StockCsvError(f"{source}: row 1: empty asset identifier")
    if len(set(assets)) != len(assets):
        raise StockCsvError(f"{source}: row 1: duplicate asset identifiers")
    dates, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise StockCsvError(f"{source}: row {r}: expected {len(header)} cells, got {len(row)}")
        try:
            dates.append(date.fromisoformat(row[0].strip()))
        except ValueError:
            raise StockCsvError(f"{source}: row {r}: invalid ISO-8601 date {row[0]!r}") from None
        vals = []
        for c, cell in enumerate(row[1:], start=2):
            cell = cell.strip()
            if not cell:
                raise StockCsvError(f"{source}: row {r}, column {c} ({assets[c - 2]}): missing price")
            try:
                v = float(cell)
            except ValueError:
                raise StockCsvError(f"{source}: row {r}, column {c}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise StockCsvError(f"{source}: row {r}, column {c}: non-finite price {cell!r}")
            vals.append(v)
        values.append(vals)
    if not values:
        raise StockCsvError(f"{source}: no data rows")
    return StockTable(dates, assets, np.array(values, dtype=np.float64))


def read_stock_csv(path) -> StockTable:
    with open(path, newline="") as fh:
        return parse_stock_csv(fh.read(), os.fspath(path))


def stock_features(table: StockTable, alpha: int = DEFAULT_WINDOW, dims: int = DEFAULT_PCA_DIMS,
                   drop_prefix: bool = False):
    """Normalized, PCA-reduced stock data; one column per asset.

    Returns the ``dims`` x assets feature matrix and the number of flagged
    (constant-window) entries.
    """
    norm, flagged = normalize_series(table.prices, alpha, drop_prefix)
    return pca_reduce(norm, dims), int(flagged.sum())


def read_labels(path, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Integer labels, one per line, or ``name,label`` rows matched to ``names``."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and len(rows[0]) == 2 and not rows[0][1].strip().lstrip("-").isdigit():
        rows = rows[1:]  # header
    try:
        if rows and len(rows[0]) == 2:
            mapping = {r[0].strip(): int(r[1]) for r in rows}
            if names is None:
                return np.array([int(r[1]) for r in rows])
            missing = [n for n in names if n not in mapping]
            if missing:
                raise ValueError(f"{path}: no label for {missing[:5]}")
            return np.array([mapping[n] for n in names])
        return np.array([int(r[0]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: bad label file: {exc}") from None
