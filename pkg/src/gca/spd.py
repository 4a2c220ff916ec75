"""Small helpers for symmetric positive-definite matrices."""

import numpy as np
import scipy.linalg as sla


class NotSPDError(ValueError):
    """A matrix expected to be symmetric positive definite is not."""


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def cholesky(a, name="matrix"):
    """Lower Cholesky factor; raises :class:`NotSPDError` naming ``name``."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NotSPDError(f"{name} has non-finite entries")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NotSPDError(f"{name} is not positive definite") from None


def logdet_from_chol(chol):
    return 2.0 * np.sum(np.log(np.diag(chol)))


def chol_solve(chol, b):
    return sla.cho_solve((chol, True), b)


def _spectral_map(a, fn):
    vals, vecs = np.linalg.eigh(sym(a))
    return sym((vecs * fn(vals)) @ vecs.T)


def logm(a):
    """Matrix logarithm ``V log(L) V^T`` of an SPD matrix."""
    vals = np.linalg.eigvalsh(sym(a))
    if vals.min() <= 0:
        raise NotSPDError("logm of a matrix with nonpositive eigenvalue")
    return _spectral_map(a, np.log)


def expm(a):
    """Matrix exponential ``V exp(L) V^T`` of a symmetric matrix."""
    return _spectral_map(a, np.exp)


def min_eig(a) -> float:
    return float(np.linalg.eigvalsh(sym(a)).min())
