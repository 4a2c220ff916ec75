"""Graph community augmentation: embed, cluster, place a new community, decode."""

from .augment import (AugmentConfig, AugmentResult, AugmentState, NotConvergedError,
                      ResampleExhaustedError, augment_graph, compute_dmax,
                      place_new_component)
from .divergence import kl_gaussian, mc_kl_oracle, variational_bound
from .embedder import (EncoderConfig, LatentEmbedding, TrainedDecoder, decode_graph,
                       decode_scores, train_vgae)
from .gmm import GmmModel, fit_em, log_density
from .graph import Graph, SbmSpec, generate_sbm, load_graph, read_edge_list, save_graph
from .mdl import DEFAULT_GRID, SelectionGrid, dnml_code_length, estimate_k, select_model
from .metrics import MetricsReport, anomaly_score, evaluate, mmd2

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "AugmentResult", "AugmentState", "EncoderConfig", "GmmModel", "Graph",
    "LatentEmbedding", "MetricsReport", "NotConvergedError", "DEFAULT_GRID",
    "ResampleExhaustedError", "SbmSpec", "SelectionGrid", "TrainedDecoder", "anomaly_score",
    "augment_graph", "compute_dmax", "decode_graph", "decode_scores", "dnml_code_length",
    "estimate_k", "evaluate", "fit_em", "generate_sbm", "kl_gaussian", "load_graph",
    "log_density", "mc_kl_oracle", "mmd2", "place_new_component", "read_edge_list",
    "save_graph", "select_model", "train_vgae", "variational_bound",
]
