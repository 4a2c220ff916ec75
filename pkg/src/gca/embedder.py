"""Variational graph autoencoder with a cosine-sigmoid decoder.

Two graph-convolution layers (shared ReLU hidden layer, linear mean and
log-variance heads) encode the nodes; the decoder scores a pair by the
sigmoid of the cosine between their latent vectors.  Gradients of the
binary cross-entropy are derived by hand and fed to Adam.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .graph import FLOAT_FMT, Graph

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
DENSE_LIMIT = 3000
SCORE_MIN = 1.0 / (1.0 + np.e)
SCORE_MAX = 1.0 / (1.0 + np.exp(-1.0))


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""


@dataclass(frozen=True)
class EncoderConfig:
    latent_dim: int = 16
    hidden_dim: Optional[int] = None   # None -> 2F, capped at 256
    epochs: int = 200
    learning_rate: float = 0.01
    seed: int = 0
    prior_kl_weight: float = 0.0
    negative_sampling: str = "auto"    # "auto" | "dense_full" | "sampled"
    negative_ratio: float = 1.0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.prior_kl_weight < 0:
            raise ValueError("prior_kl_weight must be >= 0")
        if self.negative_sampling not in ("auto", "dense_full", "sampled"):
            raise ValueError(f"unknown negative_sampling {self.negative_sampling!r}")
        if self.negative_ratio <= 0:
            raise ValueError("negative_ratio must be > 0")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class TrainedDecoder:
    edge_threshold: float

    def __post_init__(self):
        if not 0.0 < self.edge_threshold < 1.0:
            raise ValueError("edge threshold must lie in (0, 1)")


@dataclass
class LatentEmbedding:
    vectors: np.ndarray
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding has non-finite entries")

    @property
    def latent_dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    def save(self, csv_path, meta_path, extra: Optional[dict] = None) -> None:
        np.savetxt(csv_path, self.vectors, delimiter=",", fmt=FLOAT_FMT)
        meta = {"latent_dim": self.latent_dim, **self.provenance, **(extra or {})}
        with open(meta_path, "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, csv_path, meta_path=None) -> "LatentEmbedding":
        vec = np.loadtxt(csv_path, delimiter=",", ndmin=2)
        meta = {}
        if meta_path is not None:
            with open(meta_path) as fh:
                meta = json.load(fh)
        return cls(vec, meta)


@dataclass
class TrainResult:
    embedding: LatentEmbedding
    decoder: TrainedDecoder
    loss_trace: List[float]
    params: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)


# --------------------------------------------------------------------------
# model pieces

def normalized_propagation(graph: Graph) -> sp.csr_matrix:
    """``D~^-1/2 (A + I) D~^-1/2`` as CSR."""
    a = graph.adjacency() + sp.identity(graph.n_nodes, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    s = sp.diags(1.0 / np.sqrt(d))
    return (s @ a @ s).tocsr()


def _features(graph: Graph) -> np.ndarray:
    if graph.features is None:
        return np.eye(graph.n_nodes)
    return graph.features


def _glorot(rng, fan_in, fan_out):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


def init_params(n_features: int, config: EncoderConfig, rng) -> Dict[str, np.ndarray]:
    h = config.hidden_dim or min(2 * n_features, 256)
    d = config.latent_dim
    # graph-convolution layers carry a bias, zero at start
    return {"w0": _glorot(rng, n_features, h), "b0": np.zeros(h),
            "w_mu": _glorot(rng, h, d), "b_mu": np.zeros(d),
            "w_lv": _glorot(rng, h, d), "b_lv": np.zeros(d)}


def _unit_rows(z):
    norms = np.maximum(np.linalg.norm(z, axis=1), NORM_FLOOR)
    return z / norms[:, None], norms


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class _Loss:
    """BCE over either all ordered pairs ``i != j`` or a sampled pair list."""

    def __init__(self, graph: Graph, mode: str, ratio: float):
        self.n = graph.n_nodes
        self.mode = mode
        self.ratio = ratio
        if mode == "dense_full":
            self.target = graph.dense_adjacency()
        else:
            self.pos = graph.edges
            self.edge_keys = set((graph.edges[:, 0] * self.n + graph.edges[:, 1]).tolist())

    def sample_negatives(self, rng) -> np.ndarray:
        m = max(1, int(round(self.ratio * len(self.pos))))
        i = rng.integers(self.n, size=m)
        j = rng.integers(self.n - 1, size=m)
        j = j + (j >= i)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        keys = lo * self.n + hi
        keep = np.array([k not in self.edge_keys for k in keys.tolist()], dtype=bool)
        return np.column_stack([lo[keep], hi[keep]])

    def value_and_grad(self, z, neg=None) -> Tuple[float, np.ndarray]:
        u, norms = _unit_rows(z)
        if self.mode == "dense_full":
            c = u @ u.T
            s = _sigmoid(c)
            e = self.target
            off = ~np.eye(self.n, dtype=bool)
            loss = -float(np.sum((e * np.log(s) + (1 - e) * np.log1p(-s))[off]))
            g = np.where(off, s - e, 0.0)
            du = 2.0 * g @ u
        else:
            pairs = np.vstack([self.pos, neg]) if neg is not None and len(neg) else self.pos
            e = np.r_[np.ones(len(self.pos)), np.zeros(len(pairs) - len(self.pos))]
            i, j = pairs[:, 0], pairs[:, 1]
            c = np.einsum("ij,ij->i", u[i], u[j])
            s = _sigmoid(c)
            loss = -float(np.sum(e * np.log(s) + (1 - e) * np.log1p(-s)))
            g = (s - e)[:, None]
            du = np.zeros_like(u)
            np.add.at(du, i, g * u[j])
            np.add.at(du, j, g * u[i])
        # back through z / max(|z|, floor)
        radial = np.einsum("ij,ij->i", du, u)
        dz = (du - u * radial[:, None]) / norms[:, None]
        small = np.linalg.norm(z, axis=1) < NORM_FLOOR
        if small.any():
            dz[small] = du[small] / NORM_FLOOR
        return loss, dz


def _forward(params, prop, ax, eps):
    pre = ax @ params["w0"] + params["b0"]
    hid = np.maximum(pre, 0.0)
    ah = prop @ hid
    mu = ah @ params["w_mu"] + params["b_mu"]
    lv = ah @ params["w_lv"] + params["b_lv"]
    z = mu if eps is None else mu + np.exp(0.5 * lv) * eps
    return pre, ah, mu, lv, z


def loss_and_grads(params, prop, ax, eps, loss_fn: _Loss, kl_weight: float,
                   neg=None) -> Tuple[float, Dict[str, np.ndarray]]:
    pre, ah, mu, lv, z = _forward(params, prop, ax, eps)
    loss, dz = loss_fn.value_and_grad(z, neg)
    dmu = dz
    dlv = dz * eps * 0.5 * np.exp(0.5 * lv)
    if kl_weight > 0:
        loss += kl_weight * float(-0.5 * np.sum(1.0 + lv - mu * mu - np.exp(lv)))
        dmu = dmu + kl_weight * mu
        dlv = dlv + kl_weight * 0.5 * (np.exp(lv) - 1.0)
    grads = {"w_mu": ah.T @ dmu, "b_mu": dmu.sum(axis=0),
             "w_lv": ah.T @ dlv, "b_lv": dlv.sum(axis=0)}
    dah = dmu @ params["w_mu"].T + dlv @ params["w_lv"].T
    dpre = (prop.T @ dah) * (pre > 0)
    grads["w0"] = ax.T @ dpre
    grads["b0"] = dpre.sum(axis=0)
    return loss, grads


class Adam:
    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _resolve_mode(config: EncoderConfig, n: int) -> str:
    if config.negative_sampling == "auto":
        return "dense_full" if n <= DENSE_LIMIT else "sampled"
    return config.negative_sampling


def train_vgae(graph: Graph, config: EncoderConfig,
               init: Optional[Dict[str, np.ndarray]] = None) -> TrainResult:
    """Train the autoencoder; the embedding is the posterior mean."""
    if graph.n_nodes < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(config.seed)
    x = _features(graph)
    prop = normalized_propagation(graph)
    ax = prop @ x
    params = init_params(x.shape[1], config, rng) if init is None else \
        {k: np.array(v, dtype=float) for k, v in init.items()}
    mode = _resolve_mode(config, graph.n_nodes)
    loss_fn = _Loss(graph, mode, config.negative_ratio)
    opt = Adam(params, lr=config.learning_rate)
    trace: List[float] = []
    for epoch in range(config.epochs):
        eps = rng.standard_normal((graph.n_nodes, config.latent_dim))
        neg = loss_fn.sample_negatives(rng) if mode == "sampled" else None
        loss, grads = loss_and_grads(params, prop, ax, eps, loss_fn,
                                     config.prior_kl_weight, neg)
        if not np.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at epoch {epoch}; learning rate "
                f"{config.learning_rate} is probably too high")
        trace.append(loss)
        opt.step(params, grads)
    mu = _forward(params, prop, ax, None)[2]
    emb = LatentEmbedding(mu, {"seed": config.seed, "config_hash": config.config_hash(),
                               "config": asdict(config)})
    threshold = edge_threshold(emb, graph)
    return TrainResult(emb, TrainedDecoder(threshold), trace, params)


def encode(graph: Graph, params: Dict[str, np.ndarray]) -> np.ndarray:
    """Posterior means for ``graph`` under trained parameters."""
    prop = normalized_propagation(graph)
    return _forward(params, prop, prop @ _features(graph), None)[2]


# --------------------------------------------------------------------------
# decoding

def decode_scores(embedding) -> np.ndarray:
    """Dense symmetric matrix of ``sigmoid(cos(v_i, v_j))``."""
    v = embedding.vectors if isinstance(embedding, LatentEmbedding) else np.atleast_2d(embedding)
    norms = np.linalg.norm(v, axis=1)
    bad = np.flatnonzero(norms < NORM_FLOOR)
    if len(bad):
        raise ValueError(f"embedding row {int(bad[0])} has zero norm")
    u = v / norms[:, None]
    c = np.clip(u @ u.T, -1.0, 1.0)
    c = 0.5 * (c + c.T)
    return _sigmoid(c)


def pair_scores(embedding, pairs) -> np.ndarray:
    v = embedding.vectors if isinstance(embedding, LatentEmbedding) else np.atleast_2d(embedding)
    u, _ = _unit_rows(v)
    pairs = np.asarray(pairs).reshape(-1, 2)
    c = np.clip(np.einsum("ij,ij->i", u[pairs[:, 0]], u[pairs[:, 1]]), -1.0, 1.0)
    return _sigmoid(c)


def edge_threshold(embedding, graph: Graph) -> float:
    """Mean decoder score over the graph's existing edges."""
    if graph.n_edges == 0:
        return 0.5
    return float(np.mean(pair_scores(embedding, graph.edges)))


def decode_graph(embedding, decoder: TrainedDecoder, mode: str = "all_pairs",
                 original: Optional[Graph] = None) -> Graph:
    """Threshold decoder scores into a graph.

    ``preserve_original`` copies ``original``'s edges verbatim and only
    thresholds pairs touching a node beyond ``original.n_nodes``.
    """
    s = decode_scores(embedding)
    n = s.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = s[iu, ju] >= decoder.edge_threshold
    if mode == "all_pairs":
        return Graph(n, np.column_stack([iu[keep], ju[keep]]))
    if mode != "preserve_original":
        raise ValueError(f"unknown decode mode {mode!r}")
    if original is None:
        raise ValueError("preserve_original mode needs the original graph")
    n0 = original.n_nodes
    new = keep & (ju >= n0)
    edges = np.vstack([original.edges, np.column_stack([iu[new], ju[new]])])
    return Graph(n, edges)


# --------------------------------------------------------------------------
# finite-difference check

def _flatten(params):
    keys = sorted(params)
    return keys, np.concatenate([params[k].ravel() for k in keys])


def _unflatten(keys, flat, template):
    out, pos = {}, 0
    for k in keys:
        size = template[k].size
        out[k] = flat[pos:pos + size].reshape(template[k].shape)
        pos += size
    return out


def gradient_check(config: EncoderConfig, graph: Graph, epsilon: float = 1e-5,
                   params: Optional[Dict[str, np.ndarray]] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    The reparameterization noise is drawn once from ``config.seed`` and
    held fixed; the dense all-pairs loss is used.
    """
    rng = np.random.default_rng(config.seed)
    x = _features(graph)
    prop = normalized_propagation(graph)
    ax = prop @ x
    if params is None:
        params = init_params(x.shape[1], config, rng)
    eps = rng.standard_normal((graph.n_nodes, config.latent_dim))
    loss_fn = _Loss(graph, "dense_full", 1.0)
    kw = config.prior_kl_weight
    _, grads = loss_and_grads(params, prop, ax, eps, loss_fn, kw)
    keys, flat = _flatten(params)
    _, analytic = _flatten(grads)
    numeric = np.empty_like(flat)
    for idx in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[idx] += epsilon
        dn[idx] -= epsilon
        lu = loss_and_grads(_unflatten(keys, up, params), prop, ax, eps, loss_fn, kw)[0]
        ld = loss_and_grads(_unflatten(keys, dn, params), prop, ax, eps, loss_fn, kw)[0]
        numeric[idx] = (lu - ld) / (2.0 * epsilon)
    floor = 1e-7 * (1.0 + np.max(np.abs(analytic)))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
