"""Equation discovery from sampled data by evolutionary search over token
products with sparse-regression term filtering."""

from .evolution import DiscoveredModel, EvolutionConfig, discover, evolve
from .grid import DiffSpec, GridField, SmoothingSpec, differentiate, gaussian_smooth, load_grid
from .regression import RegressionProblem, lasso_fit, refit_support

__all__ = [
    "DiffSpec", "DiscoveredModel", "EvolutionConfig", "GridField", "RegressionProblem",
    "SmoothingSpec", "differentiate", "discover", "evolve", "gaussian_smooth", "lasso_fit",
    "load_grid", "refit_support",
]
