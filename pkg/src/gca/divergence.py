"""KL divergences between Gaussians and a variational bound between mixtures."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from . import spd
from .gmm import LOG_2PI, GmmModel, log_density, sample

logger = logging.getLogger(__name__)


def _check_pair(mu_a, cov_a, mu_b, cov_b):
    mu_a, mu_b = np.atleast_1d(np.asarray(mu_a, float)), np.atleast_1d(np.asarray(mu_b, float))
    cov_a, cov_b = np.atleast_2d(np.asarray(cov_a, float)), np.atleast_2d(np.asarray(cov_b, float))
    d = mu_a.shape[0]
    if mu_b.shape != (d,) or cov_a.shape != (d, d) or cov_b.shape != (d, d):
        raise ValueError("Gaussian parameters have mismatched dimensions")
    return mu_a, cov_a, mu_b, cov_b


def gaussian_entropy(cov) -> float:
    cov = np.atleast_2d(cov)
    chol = spd.cholesky(cov, "cov")
    return 0.5 * (cov.shape[0] * (LOG_2PI + 1.0) + spd.logdet_from_chol(chol))


def _trace_and_quad(chol_b, cov_a, delta):
    # tr(Sb^-1 Sa) and delta^T Sb^-1 delta without forming an inverse
    tr = float(np.trace(spd.chol_solve(chol_b, cov_a)))
    y = np.linalg.solve(chol_b, delta)
    return tr, float(y @ y)


def kl_gaussian(mu_a, cov_a, mu_b, cov_b) -> float:
    """``KL(N(mu_a, cov_a) || N(mu_b, cov_b))`` in nats."""
    mu_a, cov_a, mu_b, cov_b = _check_pair(mu_a, cov_a, mu_b, cov_b)
    la = spd.cholesky(cov_a, "cov_a")
    lb = spd.cholesky(cov_b, "cov_b")
    tr, quad = _trace_and_quad(lb, cov_a, mu_b - mu_a)
    d = mu_a.shape[0]
    val = 0.5 * (quad + tr + spd.logdet_from_chol(lb) - spd.logdet_from_chol(la) - d)
    return max(val, 0.0) if val > -1e-12 else val


def gaussian_cross_entropy(mu_a, cov_a, mu_b, cov_b) -> float:
    """``-E_{N_a}[log N_b]`` in nats."""
    mu_a, cov_a, mu_b, cov_b = _check_pair(mu_a, cov_a, mu_b, cov_b)
    spd.cholesky(cov_a, "cov_a")
    lb = spd.cholesky(cov_b, "cov_b")
    tr, quad = _trace_and_quad(lb, cov_a, mu_b - mu_a)
    return 0.5 * (mu_a.shape[0] * LOG_2PI + spd.logdet_from_chol(lb) + tr + quad)


def pairwise_kl(p: GmmModel, q: GmmModel) -> np.ndarray:
    """``(p.k, q.k)`` table of ``KL(p_i || q_j)``."""
    out = np.empty((p.k, q.k))
    for i in range(p.k):
        for j in range(q.k):
            out[i, j] = kl_gaussian(p.means[i], p.covariances[i], q.means[j], q.covariances[j])
    return out


def pairwise_cross_entropy(p: GmmModel, q: GmmModel) -> np.ndarray:
    out = np.empty((p.k, q.k))
    for i in range(p.k):
        for j in range(q.k):
            out[i, j] = gaussian_cross_entropy(p.means[i], p.covariances[i],
                                               q.means[j], q.covariances[j])
    return out


@dataclass
class BoundState:
    """Auxiliary couplings of the mixture KL bound.

    ``phi[k, k']`` and ``psi[k, k']`` are indexed by (component of p,
    component of q); rows of ``phi`` sum to ``w_k`` and columns of ``psi``
    sum to ``w'_{k'}``.
    """

    phi: np.ndarray
    psi: np.ndarray
    bound_value: float
    iterations: int = 0
    converged: bool = True
    value_trace: List[float] = field(default_factory=list)


def _masked_log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def _psi_from_phi(log_phi, log_wq):
    # psi_{k|k'} = w'_{k'} phi_{k'|k} / sum_l phi_{k'|l}
    col = logsumexp(log_phi, axis=0, keepdims=True)
    with np.errstate(invalid="ignore"):
        out = log_wq[None, :] + log_phi - col
    return np.where(np.isfinite(col), out, -np.inf)


def _phi_from_psi(log_psi, log_wp, kl):
    # phi_{k'|k} = w_k psi_{k|k'} e^{-KL} / sum_l' psi_{k|l'} e^{-KL}
    a = log_psi - kl
    row = logsumexp(a, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        out = log_wp[:, None] + a - row
    return np.where(np.isfinite(row), out, -np.inf)


def _bound_value(log_phi, log_psi, ce, ent) -> float:
    phi = np.exp(log_phi)
    mask = phi > 0
    # -sum phi [log psi - log phi - CE(N_k, N_k') + H(N_k)]
    with np.errstate(invalid="ignore"):
        inner = np.where(mask, log_psi - log_phi - ce + ent[:, None], 0.0)
    return float(-np.sum(phi[mask] * inner[mask]))


def variational_bound(p: GmmModel, q: GmmModel, init: Optional[BoundState] = None,
                      tol: float = 1e-8, max_iter: int = 200,
                      tables: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
                      ) -> BoundState:
    """Upper bound on ``KL(p || q)`` by alternating the psi and phi updates.

    ``tables`` may supply precomputed ``(kl, cross_entropy, entropy_p)``.
    The returned ``bound_value`` is the smallest seen across sweeps.
    """
    if p.dim != q.dim:
        raise ValueError("mixtures have different dimensions")
    if tables is None:
        ce = pairwise_cross_entropy(p, q)
        ent = np.array([gaussian_entropy(c) for c in p.covariances])
        kl = ce - ent[:, None]
    else:
        kl, ce, ent = tables
    log_wp, log_wq = _masked_log(p.weights), _masked_log(q.weights)
    if init is None:
        log_phi = log_wp[:, None] + log_wq[None, :]
    else:
        log_phi = _masked_log(init.phi)
    log_psi = _psi_from_phi(log_phi, log_wq)
    trace = [_bound_value(log_phi, log_psi, ce, ent)]
    best = (trace[0], log_phi, log_psi)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        log_phi_new = _phi_from_psi(log_psi, log_wp, kl)
        log_psi = _psi_from_phi(log_phi_new, log_wq)
        change = float(np.max(np.abs(np.exp(log_phi_new) - np.exp(log_phi))))
        log_phi = log_phi_new
        val = _bound_value(log_phi, log_psi, ce, ent)
        trace.append(val)
        if val <= best[0]:
            best = (val, log_phi, log_psi)
        if change < tol:
            converged = True
            break
    if not converged:
        logger.debug("variational bound not converged after %d sweeps", max_iter)
    val, log_phi, log_psi = best
    return BoundState(np.exp(log_phi), np.exp(log_psi), max(val, 0.0),
                      it, converged, trace)


def mc_kl_oracle(p: GmmModel, q: GmmModel, n_samples: int = 100_000,
                 seed: int = 0) -> Tuple[float, float]:
    """Monte-Carlo ``KL(p || q)``: ``(estimate, standard error)``."""
    x, _ = sample(p, n_samples, seed)
    diff = log_density(p, x) - log_density(q, x)
    return float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(n_samples))


def min_pairwise_novelty(model: GmmModel, mu, cov) -> Tuple[float, int]:
    """``min_k KL(N_k || N(mu, cov))`` and its (lowest) minimizing index."""
    vals = np.array([kl_gaussian(model.means[i], model.covariances[i], mu, cov)
                     for i in range(model.k)])
    k = int(np.argmin(vals))
    return float(vals[k]), k
