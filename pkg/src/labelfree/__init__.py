"""Node classification on text-attributed graphs from LLM annotations instead of human labels.

Select nodes that are both informative and easy to annotate, label them
with an LLM (or a simulated oracle), filter the noisy labels and train a
two-layer GCN on what is left.
"""
from .config import PipelineConfig, derive_seed, load_config
from .graph import (SparseNormalizedAdjacency, TextAttributedGraph, degrees, load_graph_bundle,
                    normalized_adjacency, pagerank, propagate, save_graph_bundle)
from .pipeline import budget_sweep, run_pipeline, run_single

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig", "SparseNormalizedAdjacency", "TextAttributedGraph", "budget_sweep", "degrees",
    "derive_seed", "load_config", "load_graph_bundle", "normalized_adjacency", "pagerank", "propagate",
    "run_pipeline", "run_single", "save_graph_bundle",
]
