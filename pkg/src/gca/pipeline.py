"""Library-level orchestration of the training and augmentation steps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .augment import AugmentConfig, AugmentResult, augment_graph, place_new_component
from .embedder import EncoderConfig, LatentEmbedding, TrainedDecoder, TrainResult, train_vgae
from .gmm import GmmModel, sample
from .graph import Graph
from .mdl import DEFAULT_GRID, SelectionGrid, SelectionResult, select_model

logger = logging.getLogger(__name__)


@dataclass
class TrainedModel:
    graph: Graph
    selection: SelectionResult
    runs: Dict[int, TrainResult] = field(repr=False)

    @property
    def k(self) -> int:
        return self.selection.k

    @property
    def d(self) -> int:
        return self.selection.d

    @property
    def gmm(self) -> GmmModel:
        return self.selection.model

    @property
    def embedding(self) -> LatentEmbedding:
        return self.runs[self.d].embedding

    @property
    def decoder(self) -> TrainedDecoder:
        return self.runs[self.d].decoder


def _cached_train(graph: Graph, config: EncoderConfig, cache_dir: Optional[Path]) -> TrainResult:
    if cache_dir is None:
        return train_vgae(graph, config)
    key = config.config_hash()
    csv, meta = cache_dir / f"emb_{key}.csv", cache_dir / f"emb_{key}.json"
    if csv.exists() and meta.exists():
        emb = LatentEmbedding.load(csv, meta)
        logger.info("loaded cached embedding %s", key)
        return TrainResult(emb, TrainedDecoder(emb.provenance["decoder_threshold"]),
                           emb.provenance.get("loss_trace", []))
    res = train_vgae(graph, config)
    cache_dir.mkdir(parents=True, exist_ok=True)
    res.embedding.save(csv, meta, {"decoder_threshold": res.decoder.edge_threshold,
                                   "loss_trace": res.loss_trace})
    return res


def train(graph: Graph, grid: SelectionGrid = DEFAULT_GRID,
          encoder: EncoderConfig = EncoderConfig(), seed: int = 0, jobs: int = 1,
          cache_dir: Optional[Path] = None) -> TrainedModel:
    """One autoencoder per candidate dimension, then DNML selection of (K, D)."""
    runs = {}
    for d in grid.d_candidates:
        cfg = replace(encoder, latent_dim=d, seed=seed)
        runs[d] = _cached_train(graph, cfg, cache_dir)
    sel = select_model({d: r.embedding.vectors for d, r in runs.items()}, grid,
                       seed=seed, jobs=jobs)
    logger.info("selected K=%d D=%d", sel.k, sel.d)
    return TrainedModel(graph, sel, runs)


def augment(trained: TrainedModel, config: AugmentConfig,
            allow_partial: bool = False) -> AugmentResult:
    state = place_new_component(trained.gmm, config, trained.embedding)
    return augment_graph(trained.graph, trained.embedding, trained.decoder, trained.gmm,
                         state, config, allow_partial=allow_partial, em_seed=config.seed)


def resample_without_augmentation(trained: TrainedModel, m: int, seed: int = 0):
    """Ablation: draw ``m`` extra latent points from p_orig itself and decode.

    Returns ``(graph, points)``.
    """
    from .embedder import decode_graph

    pts, _ = sample(trained.gmm, m, seed)
    full = LatentEmbedding(np.vstack([trained.embedding.vectors, pts]))
    return decode_graph(full, trained.decoder), pts
