"""Averaging dynamics on graphs: Node Model and Edge Model simulation, the
backward diffusion dual, the two-walk Q-chain, and variance / convergence
experiments."""

from .dynamics import EDGE, NODE, ModelParams, SelectionEvent, run_to_convergence
from .graph import Graph, generate, load_graph, read_graph, spectral

__version__ = "0.1.0"

__all__ = [
    "EDGE", "NODE", "Graph", "ModelParams", "SelectionEvent",
    "generate", "load_graph", "read_graph", "run_to_convergence", "spectral",
]
