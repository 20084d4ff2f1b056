"""Adaptive Gaussian Markov random fields for small-area estimation.

Structure matrices for (adaptive) RW1/ICAR models, their scaling,
penalized-complexity priors, an exact-conditional inference engine for the
smoothed direct model, and a simulation harness.
"""

__version__ = "0.1.0"

from .graph import AreaGraph, GraphError, TemporalConfig, areal_graph, temporal_graph
from .inference import FitResult, GridConfig, NumericalError, fit_model
from .latent import ModelError, ModelSpec, Observation, build_model
from .priors import PriorError
from .structmat import StructureError, StructureParts, parts_for, scale_parts

__all__ = [
    "AreaGraph",
    "FitResult",
    "GraphError",
    "GridConfig",
    "ModelError",
    "ModelSpec",
    "NumericalError",
    "Observation",
    "PriorError",
    "StructureError",
    "StructureParts",
    "TemporalConfig",
    "areal_graph",
    "build_model",
    "fit_model",
    "parts_for",
    "scale_parts",
    "temporal_graph",
]
