"""Knowledge-graph embeddings with frozen and spiking graph convolutions."""

__version__ = "0.1.0"

from .graphs import KnowledgeGraph, gen_federal_states, gen_small_kg, load_dir, resolve_dataset
from .models import build_model, load_model
from .training import TrainConfig, fit

__all__ = ["KnowledgeGraph", "TrainConfig", "build_model", "fit", "gen_federal_states",
           "gen_small_kg", "load_dir", "load_model", "resolve_dataset", "__version__"]
