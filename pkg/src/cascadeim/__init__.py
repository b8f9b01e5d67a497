"""Influence maximization on incomplete social graphs."""

from .diffusion import DiffusionParams, ExposureResponseRegressor, estimate_spread, simulate_cascade
from .gcl import ContrastiveEncoder
from .graph import DegradationSpec, Graph, degrade, load_edge_list
from .policy import DDQNSeedSelector
from .surrogate import MetricSurrogate

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "DegradationSpec",
    "DiffusionParams",
    "ExposureResponseRegressor",
    "ContrastiveEncoder",
    "DDQNSeedSelector",
    "MetricSurrogate",
    "degrade",
    "load_edge_list",
    "estimate_spread",
    "simulate_cascade",
]
