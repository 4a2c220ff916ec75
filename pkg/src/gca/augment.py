"""Placement of a new mixture component and decoding of the augmented graph.

The new component's mean is pushed away from its nearest existing
component by gradient ascent on the Gaussian KL, its covariance by a
von Neumann (matrix log/exp) mirror step on the same objective, and the
mixture weights are moved by exponentiated-gradient steps on the
variational bound of ``KL(p_orig || p_new)``.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from . import spd
from .divergence import (BoundState, gaussian_cross_entropy, gaussian_entropy,
                         kl_gaussian, min_pairwise_novelty, pairwise_cross_entropy,
                         variational_bound)
from .embedder import LatentEmbedding, TrainedDecoder, decode_graph
from .gmm import GmmModel, sample_gaussian
from .graph import Graph
from .mdl import estimate_k

logger = logging.getLogger(__name__)

SPD_CHECK = 1e-12
DMAX_TOKENS = {"dmax": 1.0, "0.5dmax": 0.5, "2dmax": 2.0}


class NotConvergedError(RuntimeError):
    pass


class ResampleExhaustedError(RuntimeError):
    def __init__(self, msg, histogram):
        super().__init__(msg)
        self.histogram = histogram


def compute_dmax(model: GmmModel) -> float:
    """Largest KL over ordered pairs of distinct components."""
    if model.k < 2:
        raise ValueError("D_max needs at least two components; pass delta1 explicitly")
    return max(kl_gaussian(model.means[i], model.covariances[i],
                           model.means[j], model.covariances[j])
               for i in range(model.k) for j in range(model.k) if i != j)


def resolve_delta1(value: Union[float, str], model: GmmModel) -> float:
    """Numbers pass through; ``dmax``-style tokens scale :func:`compute_dmax`."""
    if isinstance(value, str):
        token = value.strip().lower()
        if token in DMAX_TOKENS:
            return DMAX_TOKENS[token] * compute_dmax(model)
        if token.endswith("dmax"):
            return float(token[:-4]) * compute_dmax(model)
        return float(token)
    return float(value)


@dataclass(frozen=True)
class AugmentConfig:
    delta0: float = 5.0
    delta1: Union[float, str] = "dmax"
    eta: float = 0.01
    m_new_nodes: int = 5
    max_outer_iter: int = 5000
    max_resample: int = 20
    seed: int = 0
    init_component: Optional[int] = None      # None: random existing component
    init_mean: Optional[Tuple[float, ...]] = None
    init_cov: Optional[Tuple[Tuple[float, ...], ...]] = None
    jitter: float = 0.01
    jitter_shape: str = "covariance"          # or "isotropic"
    max_step: Optional[float] = 1.0           # None: plain gradient steps
    k_candidates: Tuple[int, ...] = tuple(range(2, 11))
    decode_mode: str = "all_pairs"

    def __post_init__(self):
        if self.delta0 < 0:
            raise ValueError("delta0 must be >= 0")
        if isinstance(self.delta1, (int, float)) and self.delta1 < 0:
            raise ValueError("delta1 must be >= 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.m_new_nodes < 1 or self.max_outer_iter < 1:
            raise ValueError("m_new_nodes and max_outer_iter must be >= 1")
        if self.jitter_shape not in ("covariance", "isotropic"):
            raise ValueError(f"unknown jitter shape {self.jitter_shape!r}")
        if self.decode_mode not in ("all_pairs", "preserve_original"):
            raise ValueError(f"unknown decode mode {self.decode_mode!r}")


@dataclass
class AugmentState:
    mu_new: np.ndarray
    sigma_new: np.ndarray
    weights_new: np.ndarray
    novelty_min: float = math.nan
    novelty_argmin: int = -1
    reliability_bound: float = math.nan
    novelty_ok: bool = False
    reliability_ok: bool = False
    iterations: int = 0
    bound: Optional[BoundState] = field(default=None, repr=False)
    novelty_trace: List[float] = field(default_factory=list)
    bound_trace: List[float] = field(default_factory=list)
    init_component: int = -1
    delta0: float = math.nan
    delta1: float = math.nan

    @property
    def converged(self) -> bool:
        return self.novelty_ok and self.reliability_ok

    def new_model(self, model: GmmModel) -> GmmModel:
        return model.with_component(self.mu_new, self.sigma_new, self.weights_new)

    def report(self) -> dict:
        return {"iterations": self.iterations,
                "converged": {"novelty": self.novelty_ok, "reliability": self.reliability_ok},
                "delta0": self.delta0, "delta1": self.delta1,
                "novelty_min": self.novelty_min, "novelty_argmin": self.novelty_argmin,
                "reliability_bound": self.reliability_bound,
                "init_component": self.init_component,
                "mu_new": self.mu_new.tolist(), "sigma_new": self.sigma_new.tolist(),
                "weights_new": self.weights_new.tolist(),
                "novelty_trace": self.novelty_trace, "bound_trace": self.bound_trace}


# --------------------------------------------------------------------------
# gradients of KL(N(mu_k, S_k) || N(mu, S)) with respect to (mu, S)

def kl_grad_mean(mu_k, cov_k, mu, cov) -> np.ndarray:
    chol = spd.cholesky(cov, "sigma_new")
    return spd.chol_solve(chol, mu - mu_k)


def kl_grad_cov(mu_k, cov_k, mu, cov) -> np.ndarray:
    chol = spd.cholesky(cov, "sigma_new")
    delta = mu - mu_k
    inner = np.outer(delta, delta) + cov_k
    sinv_inner = spd.chol_solve(chol, inner)
    sinv = spd.chol_solve(chol, np.eye(len(mu)))
    return spd.sym(0.5 * (sinv - spd.chol_solve(chol, sinv_inner.T).T))


def _usable(mu, sigma) -> bool:
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        return False
    return spd.min_eig(sigma) >= SPD_CHECK


def _trust_scale(eta, g_mu, g_cov, chol, max_step) -> float:
    # shrink eta so log-eigenvalues move by at most max_step and the mean
    # by at most max_step Mahalanobis units of the current covariance
    if max_step is None:
        return eta
    cov_len = eta * float(np.max(np.abs(np.linalg.eigvalsh(g_cov))))
    mu_len = eta * float(np.linalg.norm(np.linalg.solve(chol, g_mu)))
    longest = max(cov_len, mu_len)
    return eta if longest <= max_step else eta * max_step / longest


def novelty_step(state: AugmentState, model: GmmModel, eta: float,
                 max_step: Optional[float] = None) -> AugmentState:
    """One ascent step on the KL from the nearest existing component."""
    _, k_star = min_pairwise_novelty(model, state.mu_new, state.sigma_new)
    mu_k, cov_k = model.component(k_star)
    g_mu = kl_grad_mean(mu_k, cov_k, state.mu_new, state.sigma_new)
    g_cov = kl_grad_cov(mu_k, cov_k, state.mu_new, state.sigma_new)
    log_s = spd.logm(state.sigma_new)
    step = _trust_scale(eta, g_mu, g_cov, spd.cholesky(state.sigma_new, "sigma_new"), max_step)
    for _ in range(11):
        mu = state.mu_new + step * g_mu
        with np.errstate(over="ignore", invalid="ignore"):
            sigma = spd.sym(spd.expm(log_s + step * g_cov))
        if _usable(mu, sigma):
            try:
                nov, arg = min_pairwise_novelty(model, mu, sigma)
            except spd.NotSPDError:
                nov = math.nan
            if math.isfinite(nov):
                break
        step *= 0.5
    else:
        raise FloatingPointError("novelty step stays non-finite after 10 halvings of eta")
    return replace(state, mu_new=mu, sigma_new=sigma, novelty_min=nov, novelty_argmin=arg)


def reliability_gradient(state: AugmentState, bound: BoundState) -> np.ndarray:
    """``d bound / d w'`` holding the couplings fixed: ``-sum_k phi[k,k'] / w'_k'``."""
    return -bound.phi.sum(axis=0) / state.weights_new


def reliability_step(state: AugmentState, model: GmmModel, eta: float,
                     bound: Optional[BoundState] = None) -> AugmentState:
    """Exponentiated-gradient step on the new mixture weights."""
    if bound is None:
        bound = variational_bound(model, state.new_model(model), init=state.bound)
    g = reliability_gradient(state, bound)
    logw = np.log(state.weights_new) - eta * g
    w = np.exp(logw - logsumexp(logw))
    # keep every weight strictly positive when the exponent spread underflows
    w = np.maximum(w, np.finfo(float).tiny)
    return replace(state, weights_new=w / w.sum())


class _BoundCache:
    """Bound tables between p_orig and p_new; only the last column moves."""

    def __init__(self, model: GmmModel):
        self.model = model
        self.ce_fixed = pairwise_cross_entropy(model, model)
        self.ent = np.array([gaussian_entropy(c) for c in model.covariances])

    def bound(self, state: AugmentState) -> BoundState:
        m = self.model
        col = np.array([gaussian_cross_entropy(m.means[k], m.covariances[k],
                                               state.mu_new, state.sigma_new)
                        for k in range(m.k)])
        ce = np.column_stack([self.ce_fixed, col])
        kl = ce - self.ent[:, None]
        return variational_bound(m, state.new_model(m), init=state.bound,
                                 tables=(kl, ce, self.ent))


def initial_state(model: GmmModel, config: AugmentConfig,
                  rng: np.random.Generator) -> AugmentState:
    k = model.k
    if config.init_mean is not None:
        mu = np.array(config.init_mean, dtype=float)
        cov = np.array(config.init_cov, dtype=float) if config.init_cov is not None \
            else model.covariances[0].copy()
        src = -1
    else:
        src = int(rng.integers(k)) if config.init_component is None else config.init_component
        mu = model.means[src].copy()
        cov = model.covariances[src].copy()
        # the copied component is a stationary point: nudge the mean
        noise = rng.standard_normal(model.dim)
        if config.jitter_shape == "isotropic":
            mu = mu + config.jitter * math.sqrt(float(np.mean(np.diag(cov)))) * noise
        else:
            # shaped by the component itself, so the starting KL is
            # jitter^2 |noise|^2 / 2 however ill-conditioned cov is
            mu = mu + config.jitter * (spd.cholesky(cov, "cov") @ noise)
    w = np.r_[model.weights * k / (k + 1), 1.0 / (k + 1)]
    return AugmentState(mu, spd.sym(cov), w / w.sum(), init_component=src)


def place_new_component(model: GmmModel, config: AugmentConfig,
                        embedding: Optional[LatentEmbedding] = None) -> AugmentState:
    """Alternate novelty and reliability steps until both conditions hold."""
    rng = np.random.default_rng(config.seed)
    delta0 = float(config.delta0)
    delta1 = resolve_delta1(config.delta1, model)
    cache = _BoundCache(model)
    state = initial_state(model, config, rng)

    def evaluate(s: AugmentState) -> AugmentState:
        nov, arg = min_pairwise_novelty(model, s.mu_new, s.sigma_new)
        b = cache.bound(s)
        s = replace(s, novelty_min=nov, novelty_argmin=arg, bound=b,
                    reliability_bound=b.bound_value,
                    novelty_ok=bool(nov >= delta0),
                    reliability_ok=bool(b.bound_value <= delta1))
        s.novelty_trace.append(nov)
        s.bound_trace.append(b.bound_value)
        return s

    state = evaluate(replace(state, delta0=delta0, delta1=delta1))
    it = 0
    while not state.converged and it < config.max_outer_iter:
        it += 1
        state = novelty_step(state, model, config.eta, config.max_step)
        state = replace(state, bound=cache.bound(state))
        state = reliability_step(state, model, config.eta, state.bound)
        state = evaluate(state)
    state.iterations = it
    if not state.converged:
        logger.warning("augmentation stopped after %d iterations without meeting "
                       "novelty=%s reliability=%s", it, state.novelty_ok, state.reliability_ok)
    return state


@dataclass
class AugmentResult:
    graph: Graph
    state: AugmentState
    k_est: int
    new_points: np.ndarray
    attempts: List[int]
    seeds: List[int]
    k_check_passed: bool = True

    def augmented_embedding(self, embedding: LatentEmbedding) -> LatentEmbedding:
        return LatentEmbedding(np.vstack([embedding.vectors, self.new_points]),
                               dict(embedding.provenance))


def augment_graph(graph: Graph, embedding: LatentEmbedding, decoder: TrainedDecoder,
                  model: GmmModel, state: AugmentState, config: AugmentConfig,
                  allow_partial: bool = False, em_seed: int = 0) -> AugmentResult:
    """Sample the new community, re-check K by DNML and decode ``v || v'``.

    With ``allow_partial`` an unconverged state is accepted, and an
    exhausted re-check keeps the last draw (flagged on the result) instead
    of raising.
    """
    if not state.converged and not allow_partial:
        raise NotConvergedError("augmentation state has not met both conditions")
    v = embedding.vectors
    target = model.k + 1
    # K+1 must be reachable even when the training grid topped out at K
    ks = sorted(set(config.k_candidates) | {target})
    ks = [k for k in ks if k < len(v) + config.m_new_nodes]
    attempts, seeds = [], []
    new_points = None
    passed = True
    for attempt in range(config.max_resample):
        child = int(np.random.SeedSequence([config.seed, attempt]).generate_state(1)[0])
        seeds.append(child)
        new_points = sample_gaussian(state.mu_new, state.sigma_new, config.m_new_nodes, child)
        k_est = estimate_k(np.vstack([v, new_points]), ks, seed=em_seed).k
        attempts.append(k_est)
        if k_est == target:
            break
    else:
        hist = dict(sorted(Counter(attempts).items()))
        msg = f"K_est never reached {target} in {config.max_resample} draws: {hist}"
        if not allow_partial:
            raise ResampleExhaustedError(msg, hist)
        logger.warning("%s; keeping the last draw", msg)
        passed = False
    full = LatentEmbedding(np.vstack([v, new_points]))
    g_new = decode_graph(full, decoder, config.decode_mode, graph)
    return AugmentResult(g_new, state, attempts[-1], new_points, attempts, seeds, passed)
