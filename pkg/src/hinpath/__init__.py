"""Multi-hop path-aware recommendation over heterogeneous information networks."""

from .graph import HeteroGraph, build_graph
from .paths import MetaPathSchema, PathConfig, PathInstance, PathSet, build_path_set, enumerate_paths, select_paths
from .model import ModelConfig, init_params, score_pair

__version__ = "0.1.0"

__all__ = [
    "HeteroGraph",
    "MetaPathSchema",
    "ModelConfig",
    "PathConfig",
    "PathInstance",
    "PathSet",
    "build_graph",
    "build_path_set",
    "enumerate_paths",
    "init_params",
    "score_pair",
    "select_paths",
]
