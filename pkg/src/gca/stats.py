"""Per-graph structural statistics used by the metrics and feature code."""

from __future__ import annotations

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph import Graph

# connected 4-node graphlets, in column order of ``orbit4_counts``
GRAPHLET_TYPES = ("path", "star", "cycle", "paw", "diamond", "clique")


class SpectrumError(RuntimeError):
    """Eigensolver failed to converge on the normalized Laplacian."""


def degree_histogram(graph: Graph) -> np.ndarray:
    """``hist[d]`` = number of nodes with degree ``d``."""
    if graph.n_nodes == 0:
        raise ValueError("empty graph")
    return np.bincount(graph.degrees())


def clustering_coefficients(graph: Graph) -> np.ndarray:
    """Local clustering ``2 T_i / (d_i (d_i - 1))``; zero when ``d_i < 2``."""
    if graph.n_nodes == 0:
        raise ValueError("empty graph")
    a = graph.adjacency()
    tri = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0
    deg = graph.degrees().astype(float)
    denom = deg * (deg - 1)
    out = np.zeros(graph.n_nodes)
    ok = deg >= 2
    out[ok] = 2.0 * tri[ok] / denom[ok]
    return out


def normalized_laplacian(graph: Graph) -> np.ndarray:
    """Dense ``I - D^-1/2 A D^-1/2``; isolated nodes get a zero row."""
    a = graph.dense_adjacency()
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = -(inv_sqrt[:, None] * a * inv_sqrt[None, :])
    lap[np.diag_indices_from(lap)] += nz.astype(float)
    return lap


def laplacian_spectrum(graph: Graph) -> np.ndarray:
    """Sorted eigenvalues of the normalized Laplacian, clipped to [0, 2]."""
    if graph.n_nodes == 0:
        raise ValueError("empty graph")
    try:
        vals = np.linalg.eigvalsh(normalized_laplacian(graph))
    except np.linalg.LinAlgError as exc:
        raise SpectrumError(f"eigensolver did not converge: {exc}") from exc
    return np.clip(np.sort(vals), 0.0, 2.0)


def _classify(n_edges: int, max_deg: int) -> int:
    if n_edges == 3:
        return 1 if max_deg == 3 else 0
    if n_edges == 4:
        return 3 if max_deg == 3 else 2
    return 4 if n_edges == 5 else 5


def iter_connected_4sets(graph: Graph):
    """Yield each connected 4-node vertex set exactly once (ESU enumeration)."""
    nbrs = graph.neighbor_sets()

    def extend(sub, sub_nbhd, ext, root):
        if len(sub) == 4:
            yield tuple(sub)
            return
        ext = list(ext)
        while ext:
            w = ext.pop()
            excl = {u for u in nbrs[w] if u > root and u not in sub and u not in sub_nbhd}
            yield from extend(sub + [w], sub_nbhd | nbrs[w], ext + sorted(excl), root)

    for v in range(graph.n_nodes):
        ext = sorted(u for u in nbrs[v] if u > v)
        yield from extend([v], nbrs[v] | {v}, ext, v)


def orbit4_counts(graph: Graph) -> np.ndarray:
    """Per-node membership counts in connected induced 4-node subgraphs.

    Returns an ``(n_nodes, 6)`` integer array with columns ordered as
    :data:`GRAPHLET_TYPES`.
    """
    if graph.n_nodes == 0:
        raise ValueError("empty graph")
    nbrs = graph.neighbor_sets()
    counts = np.zeros((graph.n_nodes, len(GRAPHLET_TYPES)), dtype=np.int64)
    for quad in iter_connected_4sets(graph):
        degs = [sum(1 for u in quad if u in nbrs[v]) for v in quad]
        kind = _classify(sum(degs) // 2, max(degs))
        for v in quad:
            counts[v, kind] += 1
    return counts


def n_connected_components(graph: Graph) -> int:
    return int(connected_components(graph.adjacency(), directed=False)[0])
