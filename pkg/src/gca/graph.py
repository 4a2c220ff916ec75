"""Undirected graph container, edge-list I/O and synthetic generators."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


class GraphFormatError(ValueError):
    """Raised when an edge list or companion file is malformed."""


def _normalize_edges(edges, n_nodes: Optional[int] = None, warn: bool = True) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size and arr.min() < 0:
        raise GraphFormatError("negative node index in edge list")
    if n_nodes is not None and arr.size and arr.max() >= n_nodes:
        raise GraphFormatError(
            f"edge endpoint {int(arr.max())} out of range for {n_nodes} nodes")
    loops = arr[:, 0] == arr[:, 1]
    if loops.any():
        if warn:
            logger.warning("dropping %d self-loop(s)", int(loops.sum()))
        arr = arr[~loops]
    arr = np.sort(arr, axis=1)
    uniq = np.unique(arr, axis=0) if len(arr) else arr
    if warn and len(uniq) < len(arr):
        logger.warning("deduplicated %d repeated edge(s)", len(arr) - len(uniq))
    return uniq.reshape(-1, 2)


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph.

    ``edges`` is an ``(m, 2)`` integer array of pairs ``i < j`` in
    lexicographic order, each pair stored once.  ``features`` is an
    ``(n_nodes, F)`` float array or ``None`` when the graph carries no
    node attributes (the encoder then uses identity features).
    """

    n_nodes: int
    edges: np.ndarray
    features: Optional[np.ndarray] = None
    node_labels: Optional[np.ndarray] = None
    _adj: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_nodes < 0:
            raise ValueError("n_nodes must be nonnegative")
        edges = _normalize_edges(self.edges, self.n_nodes, warn=False)
        object.__setattr__(self, "edges", edges)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=float)
            if feats.ndim == 1:
                feats = feats[:, None]
            if feats.shape[0] != self.n_nodes or feats.shape[1] < 1:
                raise ValueError(
                    f"features shape {feats.shape} inconsistent with {self.n_nodes} nodes")
            object.__setattr__(self, "features", feats)
        if self.node_labels is not None:
            labels = np.asarray(self.node_labels, dtype=np.int64)
            if labels.shape != (self.n_nodes,):
                raise ValueError("node_labels must have one entry per node")
            object.__setattr__(self, "node_labels", labels)

    @classmethod
    def from_edges(cls, n_nodes: int, edges, features=None, node_labels=None,
                   warn: bool = True) -> "Graph":
        return cls(n_nodes, _normalize_edges(edges, n_nodes, warn=warn),
                   features, node_labels)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_set(self) -> set:
        return {(int(i), int(j)) for i, j in self.edges}

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency as CSR (cached)."""
        if "csr" not in self._adj:
            n = self.n_nodes
            i, j = self.edges[:, 0], self.edges[:, 1]
            data = np.ones(2 * len(i))
            a = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
            self._adj["csr"] = a
        return self._adj["csr"]

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency().toarray()

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def neighbor_sets(self) -> list:
        if "nbrs" not in self._adj:
            nbrs = [set() for _ in range(self.n_nodes)]
            for i, j in self.edges:
                nbrs[i].add(int(j))
                nbrs[j].add(int(i))
            self._adj["nbrs"] = nbrs
        return self._adj["nbrs"]

    def with_features(self, features) -> "Graph":
        return Graph(self.n_nodes, self.edges, features, self.node_labels)

    def subgraph(self, n_first: int) -> "Graph":
        """Induced subgraph on nodes ``0 .. n_first-1``."""
        keep = (self.edges < n_first).all(axis=1)
        feats = None if self.features is None else self.features[:n_first]
        labels = None if self.node_labels is None else self.node_labels[:n_first]
        return Graph(n_first, self.edges[keep], feats, labels)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.n_nodes == other.n_nodes
                and np.array_equal(self.edges, other.edges)
                and _opt_equal(self.features, other.features)
                and _opt_equal(self.node_labels, other.node_labels))

    __hash__ = None


def _opt_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and np.array_equal(a, b)


# --------------------------------------------------------------------------
# Stochastic block model

@dataclass(frozen=True)
class SbmSpec:
    """Recipe for a planted-partition graph.

    ``n_communities`` is either a fixed count or an inclusive ``(lo, hi)``
    range drawn uniformly per graph; community sizes are drawn uniformly
    from ``community_size_range`` (inclusive).
    """

    n_communities: Union[int, Tuple[int, int]] = (2, 5)
    community_size_range: Tuple[int, int] = (20, 40)
    intra_p: float = 0.3
    inter_p: float = 0.005
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.community_size_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid community size range {self.community_size_range}")
        kc = self.n_communities
        klo, khi = (kc, kc) if isinstance(kc, (int, np.integer)) else kc
        if klo < 1 or khi < klo:
            raise ValueError(f"invalid community count {self.n_communities}")
        for name in ("intra_p", "inter_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if not self.inter_p < self.intra_p:
            raise ValueError("SBM requires inter_p < intra_p")


def spectral_features(graph: Graph, n_components: int = 2) -> np.ndarray:
    """Node coordinates in the low-frequency eigenvectors of the normalized
    Laplacian, skipping the first (trivial) eigenvector.

    Signs are fixed so the largest-magnitude entry of each vector is positive.
    Missing columns (tiny graphs) are zero-filled.
    """
    from .stats import normalized_laplacian

    n = graph.n_nodes
    out = np.zeros((n, n_components))
    if n < 2:
        return out
    _, vecs = np.linalg.eigh(normalized_laplacian(graph))
    cols = vecs[:, 1:1 + n_components]
    for c in range(cols.shape[1]):
        v = cols[:, c]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        out[:, c] = v
    return out


def _sample_pairs(rng: np.random.Generator, blocks: np.ndarray, intra_p: float,
                  inter_p: float) -> np.ndarray:
    n = len(blocks)
    iu, ju = np.triu_indices(n, k=1)
    probs = np.where(blocks[iu] == blocks[ju], intra_p, inter_p)
    keep = rng.random(len(iu)) < probs
    return np.column_stack([iu[keep], ju[keep]])


def generate_sbm(spec: SbmSpec) -> Graph:
    """Sample a stochastic block model graph with spectral node features."""
    rng = np.random.default_rng(spec.seed)
    kc = spec.n_communities
    if isinstance(kc, (int, np.integer)):
        n_comm = int(kc)
    else:
        n_comm = int(rng.integers(kc[0], kc[1] + 1))
    lo, hi = spec.community_size_range
    sizes = rng.integers(lo, hi + 1, size=n_comm)
    blocks = np.repeat(np.arange(n_comm), sizes)
    edges = _sample_pairs(rng, blocks, spec.intra_p, spec.inter_p)
    g = Graph(int(sizes.sum()), edges, None, blocks)
    return g.with_features(spectral_features(g))


def erdos_renyi(n_nodes: int, p: float, seed: int = 0) -> Graph:
    """G(n, p) random graph without node features."""
    rng = np.random.default_rng(seed)
    edges = _sample_pairs(rng, np.zeros(n_nodes, dtype=int), p, 0.0)
    return Graph(n_nodes, edges)


def edge_density(graph: Graph) -> float:
    n = graph.n_nodes
    return 0.0 if n < 2 else 2.0 * graph.n_edges / (n * (n - 1))


# --------------------------------------------------------------------------
# Edge-list files

def read_edge_list(path, features_path=None, labels_path=None,
                   n_nodes: Optional[int] = None) -> Graph:
    """Read a 0-based ``u v [weight]`` edge list.

    The node count is the largest of ``n_nodes``, the feature/label row
    counts and ``max index + 1``.  When a feature or label file fixes the
    node count, edge endpoints beyond it are an error.  Weights are
    binarized (``> 0`` keeps the edge).
    """
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphFormatError(f"{path}:{lineno}: expected 'u v [w]', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from None
            if w > 0:
                pairs.append((u, v))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    features = None
    if features_path is not None:
        features = np.loadtxt(features_path, delimiter=",", ndmin=2, dtype=float)
        if features.size == 0:
            features = None
    labels = None
    if labels_path is not None:
        labels = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)

    fixed = [x for x in (n_nodes,
                         None if features is None else features.shape[0],
                         None if labels is None else labels.shape[0]) if x is not None]
    if fixed:
        if len(set(fixed)) > 1:
            raise GraphFormatError(f"inconsistent node counts {fixed}")
        n = fixed[0]
    else:
        n = int(edges.max()) + 1 if edges.size else 0
    return Graph.from_edges(n, edges, features, labels)


def write_edge_list(graph: Graph, path, features_path=None, labels_path=None) -> None:
    """Write ``graph`` so that :func:`read_edge_list` reproduces it exactly."""
    with open(path, "w") as fh:
        for i, j in graph.edges:
            fh.write(f"{i} {j}\n")
    if features_path is not None and graph.features is not None:
        np.savetxt(features_path, graph.features, delimiter=",", fmt=FLOAT_FMT)
    if labels_path is not None and graph.node_labels is not None:
        np.savetxt(labels_path, graph.node_labels, fmt="%d")


def graph_paths(stem) -> Tuple[Path, Path, Path]:
    """Conventional companion paths: ``stem.edges``, ``stem.features.csv``,
    ``stem.labels``."""
    stem = Path(stem)
    return (stem.with_name(stem.name + ".edges"),
            stem.with_name(stem.name + ".features.csv"),
            stem.with_name(stem.name + ".labels"))


def save_graph(graph: Graph, stem) -> Tuple[Path, ...]:
    e, f, l = graph_paths(stem)
    write_edge_list(graph, e, f, l)
    return tuple(p for p in (e, f, l) if p.exists())


def load_graph(path_or_stem) -> Graph:
    """Load by stem or by ``.edges`` path, picking up companion files."""
    p = Path(path_or_stem)
    stem = p.with_suffix("") if p.suffix == ".edges" else p
    e, f, l = graph_paths(stem)
    if not e.exists():
        if p.exists():
            return read_edge_list(p)
        raise FileNotFoundError(e)
    return read_edge_list(e, f if f.exists() else None, l if l.exists() else None)


def disjoint_union(graphs: Sequence[Graph]) -> Graph:
    """Block-diagonal union; features are dropped unless all graphs share F."""
    offsets = np.cumsum([0] + [g.n_nodes for g in graphs])
    edges = np.vstack([g.edges + off for g, off in zip(graphs, offsets)]) \
        if graphs else np.zeros((0, 2), int)
    feats = None
    if graphs and all(g.features is not None for g in graphs) and \
            len({g.features.shape[1] for g in graphs}) == 1:
        feats = np.vstack([g.features for g in graphs])
    return Graph(int(offsets[-1]), edges, feats)
