"""Full-covariance Gaussian mixtures: EM fitting, densities and sampling."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from . import spd

logger = logging.getLogger(__name__)

COV_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray       # (k,)
    means: np.ndarray         # (k, D)
    covariances: np.ndarray   # (k, D, D)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        if cov.ndim == 2:
            cov = cov[None]
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ValueError(f"inconsistent GMM shapes w{w.shape} mu{mu.shape} cov{cov.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must lie on the simplex")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", spd.sym(cov))

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.means[i], self.covariances[i]

    def with_component(self, mean, cov, weights) -> "GmmModel":
        """Return a ``k+1`` mixture with the extra component appended."""
        return GmmModel(weights, np.vstack([self.means, mean[None]]),
                        np.concatenate([self.covariances, cov[None]]))

    def component_log_pdf(self, points) -> np.ndarray:
        """``(n, k)`` matrix of ``log N(x_n; mu_k, Sigma_k)``."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        try:
            chol = np.linalg.cholesky(self.covariances)
        except np.linalg.LinAlgError:
            # redo one at a time so the failing component is named
            for i in range(self.k):
                spd.cholesky(self.covariances[i], f"covariance {i}")
            raise
        diff = np.swapaxes(x[None] - self.means[:, None], 1, 2)    # (k, D, n)
        z = np.linalg.solve(chol, diff)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        maha = np.sum(z * z, axis=1)
        return -0.5 * (self.dim * LOG_2PI + logdet[:, None] + maha).T

    def to_dict(self) -> dict:
        return {"k": self.k, "dim": self.dim,
                "weights": self.weights.tolist(),
                "means": self.means.tolist(),
                "covariances": self.covariances.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        model = cls(np.array(d["weights"]), np.array(d["means"]), np.array(d["covariances"]))
        if model.k != d["k"] or model.dim != d["dim"]:
            raise ValueError("GMM header does not match arrays")
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "GmmModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class Assignment:
    labels: np.ndarray            # (n,)
    responsibilities: np.ndarray  # (n, k)


@dataclass
class EmResult:
    model: GmmModel
    assignment: Assignment
    loglik_trace: List[float]
    n_reseeds: int = 0


def gaussian_log_pdf(x, mean, cov) -> np.ndarray:
    x = np.atleast_2d(x)
    chol = spd.cholesky(cov, "covariance")
    z = np.linalg.solve(chol, (x - mean).T)
    d = x.shape[1]
    return -0.5 * (d * LOG_2PI + spd.logdet_from_chol(chol) + np.sum(z * z, axis=0))


def log_density(model: GmmModel, points):
    """Mixture log-density; scalar for a single point, array for a matrix."""
    x = np.asarray(points, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.dim:
        raise ValueError(f"point dim {x.shape[1]} != model dim {model.dim}")
    with np.errstate(divide="ignore"):
        lw = np.log(model.weights)
    out = logsumexp(model.component_log_pdf(x) + lw, axis=1)
    return float(out[0]) if single else out


def responsibilities(model: GmmModel, points) -> Assignment:
    x = np.atleast_2d(points)
    with np.errstate(divide="ignore"):
        joint = model.component_log_pdf(x) + np.log(model.weights)
    resp = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
    # np.argmax returns the first maximal index: ties go to the lower component
    return Assignment(np.argmax(resp, axis=1), resp)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, resp, reg):
    n, d = x.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    means = (resp.T @ x) / nk[:, None]
    diff = x[None] - means[:, None]                              # (k, n, D)
    covs = np.swapaxes(resp.T[:, :, None] * diff, 1, 2) @ diff / nk[:, None, None]
    return weights, means, spd.sym(covs) + reg * np.eye(d)


def _run_em(x, k, rng, max_iter, tol, reg):
    n = x.shape[0]
    centers = _kmeans_pp(x, k, rng)
    d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    trace: List[float] = []
    reseeds = 0
    min_mass = 1e-8 * n
    model = None
    for _ in range(max_iter + 1):
        nk = resp.sum(axis=0)
        empty = np.flatnonzero(nk < min_mass)
        if len(empty):
            # re-seed starved components on the worst-explained points
            if model is None:
                point_ll = -d2.min(axis=1)
            else:
                point_ll = log_density(model, x)
            order = np.argsort(point_ll, kind="stable")
            for j, c in enumerate(empty):
                resp[order[j]] = 0.0
                resp[order[j], c] = 1.0
            reseeds += len(empty)
            logger.info("EM re-seeded %d empty component(s)", len(empty))
            trace = []
        w, mu, cov = _m_step(x, resp, reg)
        model = GmmModel(w / w.sum(), mu, cov)
        joint = model.component_log_pdf(x) + np.log(np.maximum(model.weights, 1e-300))
        top = joint.max(axis=1, keepdims=True)
        norm = top + np.log(np.exp(joint - top).sum(axis=1, keepdims=True))
        ll = float(norm.sum())
        resp = np.exp(joint - norm)
        if trace and ll - trace[-1] < tol * abs(trace[-1]):
            trace.append(ll)
            break
        trace.append(ll)
    return model, trace, reseeds


def fit_em(points, k: int, seed: int = 0, max_iter: int = 500, tol: float = 1e-6,
           n_init: int = 5, reg: float = COV_FLOOR) -> EmResult:
    """Fit a ``k``-component full-covariance GMM by EM.

    Each of ``n_init`` restarts is seeded by k-means++ from a child of
    ``seed``; the restart with the highest final log-likelihood wins.
    ``reg`` is added to every covariance diagonal at each M-step.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = x.shape
    if k < 1 or d < 1:
        raise ValueError("need k >= 1 and D >= 1")
    if n <= k:
        raise ValueError(f"EM needs more points than components (N={n}, k={k})")
    best = None
    children = np.random.SeedSequence(seed).spawn(n_init if k > 1 else 1)
    for child in children:
        model, trace, reseeds = _run_em(x, k, np.random.default_rng(child), max_iter, tol, reg)
        if best is None or trace[-1] > best[1][-1]:
            best = (model, trace, reseeds)
    model, trace, reseeds = best
    return EmResult(model, responsibilities(model, x), trace, reseeds)


def sample_gaussian(mean, cov, m: int, seed=0) -> np.ndarray:
    """Draw ``m`` rows from ``N(mean, cov)`` via Cholesky (eigh fallback)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mean = np.asarray(mean, dtype=float)
    z = rng.standard_normal((m, mean.shape[0]))
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        logger.warning("Cholesky failed on near-singular covariance; using eigh")
        vals, vecs = np.linalg.eigh(spd.sym(cov))
        factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return mean + z @ factor.T


def sample(model: GmmModel, m: int, seed=0) -> Tuple[np.ndarray, np.ndarray]:
    """Sample ``m`` points from the mixture; returns ``(points, components)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    comps = rng.choice(model.k, size=m, p=model.weights)
    out = np.empty((m, model.dim))
    for i in range(model.k):
        idx = np.flatnonzero(comps == i)
        if len(idx):
            out[idx] = sample_gaussian(model.means[i], model.covariances[i], len(idx), rng)
    return out, comps
