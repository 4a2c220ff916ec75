"""DNML code lengths for Gaussian mixtures and (K, D) model selection."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .gmm import COV_FLOOR, LOG_2PI, Assignment, GmmModel, fit_em

logger = logging.getLogger(__name__)


def multinomial_complexity_log(n: int, k: int) -> float:
    """``log C_k(n)``, the exact NML normalizer of a k-category multinomial.

    ``C_2`` is an O(n) sum; higher ``k`` follow the linear recurrence
    ``C_{k+1} = C_k + n / (k - 1) * C_{k-1}``.
    """
    if k < 1 or n < 0:
        raise ValueError("need n >= 0 and k >= 1")
    if k == 1 or n == 0:
        return 0.0
    h = np.arange(n + 1, dtype=float)
    rest = n - h
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(h > 0, h * np.log(h / n), 0.0)
        t2 = np.where(rest > 0, rest * np.log(rest / n), 0.0)
    terms = gammaln(n + 1) - gammaln(h + 1) - gammaln(rest + 1) + t1 + t2
    log_prev, log_cur = 0.0, float(logsumexp(terms))
    log_n = math.log(n)
    for j in range(2, k):
        log_prev, log_cur = log_cur, float(np.logaddexp(log_cur, log_n - math.log(j - 1) + log_prev))
    return log_cur


def nml_categorical(labels, k: int) -> float:
    """NML code length (nats) of a label sequence over ``k`` categories."""
    z = np.asarray(labels, dtype=np.int64).ravel()
    if z.size and (z.min() < 0 or z.max() >= k):
        raise ValueError("labels must lie in [0, k)")
    n = z.size
    counts = np.bincount(z, minlength=k).astype(float)
    nz = counts[counts > 0]
    nll = -float(np.sum(nz * np.log(nz / n))) if n else 0.0
    return nll + multinomial_complexity_log(n, k)


def gaussian_complexity(n_c: int, dim: int, diagonal: bool = False) -> float:
    """Asymptotic stochastic complexity ``(m/2) log(n/(2 pi))`` of one
    Gaussian cluster, with ``m`` free parameters (mean plus covariance)."""
    m = 2 * dim if diagonal else dim + dim * (dim + 1) // 2
    return 0.5 * m * math.log(n_c / (2.0 * math.pi))


def _cluster_nll(x: np.ndarray, reg: float, diagonal: bool) -> float:
    n, d = x.shape
    mu = x.mean(axis=0)
    diff = x - mu
    if diagonal:
        var = (diff * diff).mean(axis=0) + reg
        return 0.5 * float(n * (d * LOG_2PI + np.sum(np.log(var))) + np.sum(diff * diff / var))
    cov = diff.T @ diff / n + reg * np.eye(d)
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, diff.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return 0.5 * float(n * (d * LOG_2PI + logdet) + np.sum(z * z))


def nml_gaussian_conditional(points, labels, k: int, reg: float = COV_FLOOR) -> float:
    """Code length (nats) of the points given hard cluster labels.

    Sum over nonempty clusters of the Gaussian negative max log-likelihood
    plus :func:`gaussian_complexity`.  Clusters with fewer than ``D + 2``
    points use a diagonal covariance.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    z = np.asarray(labels, dtype=np.int64)
    d = x.shape[1]
    total = 0.0
    for c in range(k):
        xc = x[z == c]
        n_c = len(xc)
        if n_c == 0:
            continue
        diagonal = n_c < d + 2
        if diagonal:
            logger.debug("cluster %d has %d < D+2 points; diagonal covariance", c, n_c)
        total += _cluster_nll(xc, reg, diagonal) + gaussian_complexity(n_c, d, diagonal)
    return total


@dataclass(frozen=True)
class CodeLengthReport:
    l_data_given_z: float
    l_z: float
    total: float
    k: int
    d: int


def dnml_code_length(points, labels, k: int, reg: float = COV_FLOOR) -> CodeLengthReport:
    x = np.atleast_2d(points)
    l_x = nml_gaussian_conditional(x, labels, k, reg)
    l_z = nml_categorical(labels, k)
    return CodeLengthReport(l_x, l_z, l_x + l_z, k, x.shape[1])


@dataclass(frozen=True)
class SelectionGrid:
    k_candidates: tuple
    d_candidates: tuple

    def __post_init__(self):
        ks = tuple(sorted({int(k) for k in self.k_candidates}))
        ds = tuple(sorted({int(d) for d in self.d_candidates}))
        if not ks or not ds or ks[0] < 1 or ds[0] < 1:
            raise ValueError("selection grid needs nonempty candidates >= 1")
        object.__setattr__(self, "k_candidates", ks)
        object.__setattr__(self, "d_candidates", ds)


DEFAULT_GRID = SelectionGrid(tuple(range(2, 11)), (4, 8, 16, 24, 32))


@dataclass
class SelectionCell:
    k: int
    d: int
    report: Optional[CodeLengthReport]
    model: Optional[GmmModel] = field(default=None, repr=False)
    assignment: Optional[Assignment] = field(default=None, repr=False)
    error: Optional[str] = None

    @property
    def total(self) -> float:
        return math.inf if self.report is None else self.report.total


@dataclass
class SelectionResult:
    k: int
    d: int
    model: GmmModel
    assignment: Assignment
    table: List[SelectionCell]

    def to_csv(self, path, bits: bool = True) -> None:
        """Write the grid as CSV (bits by default); the argmin row is flagged."""
        scale = 1.0 / math.log(2.0) if bits else 1.0
        with open(path, "w") as fh:
            fh.write("k,d,l_data_given_z,l_z,total,selected\n")
            for c in self.table:
                if c.report is None:
                    vals = ("inf", "inf", "inf")
                else:
                    vals = tuple(repr(v * scale) for v in
                                 (c.report.l_data_given_z, c.report.l_z, c.report.total))
                sel = int(c.k == self.k and c.d == self.d)
                fh.write(f"{c.k},{c.d},{vals[0]},{vals[1]},{vals[2]},{sel}\n")


def _fit_cell(args) -> SelectionCell:
    k, d, x, seed, em_kwargs = args
    try:
        fit = fit_em(x, k, seed=seed, **em_kwargs)
        report = dnml_code_length(x, fit.assignment.labels, k, em_kwargs.get("reg", COV_FLOOR))
        if not math.isfinite(report.total):
            raise FloatingPointError("non-finite code length")
        return SelectionCell(k, d, report, fit.model, fit.assignment)
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        logger.warning("selection cell (k=%d, d=%d) failed: %s", k, d, exc)
        return SelectionCell(k, d, None, error=str(exc))


def _argmin(cells: Sequence[SelectionCell]) -> SelectionCell:
    best = None
    # cells are ordered by (k, d): strict < keeps the smaller k, then smaller d, on ties
    for c in cells:
        if c.report is not None and (best is None or c.total < best.total):
            best = c
    if best is None:
        raise RuntimeError("every (k, d) selection cell failed")
    return best


def select_model(embeddings_by_dim: Dict[int, np.ndarray], grid: SelectionGrid,
                 seed: int = 0, jobs: int = 1, **em_kwargs) -> SelectionResult:
    """Fit EM on every ``(k, d)`` cell and return the DNML argmin."""
    missing = [d for d in grid.d_candidates if d not in embeddings_by_dim]
    if missing:
        raise KeyError(f"no embedding for dimension(s) {missing}")
    tasks = [(k, d, np.asarray(embeddings_by_dim[d], dtype=float), seed, em_kwargs)
             for k in grid.k_candidates for d in grid.d_candidates]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_fit_cell, tasks))
    else:
        cells = [_fit_cell(t) for t in tasks]
    best = _argmin(cells)
    return SelectionResult(best.k, best.d, best.model, best.assignment, cells)


def estimate_k(points, k_candidates: Iterable[int], seed: int = 0, jobs: int = 1,
               **em_kwargs) -> SelectionResult:
    """DNML argmin over ``k`` for a single embedding."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    d = x.shape[1]
    return select_model({d: x}, SelectionGrid(tuple(k_candidates), (d,)), seed, jobs, **em_kwargs)
