"""Exact shock-particle method for scalar conservation and balance laws."""

from .errors import ConfigError, DomainError, IntegrationAccuracyError, SolverError
from .flux import FluxFunction, builtin_flux, shock_speed
from .integrator import EvolveOptions, evolve
from .interpolant import Segment, cell_averages, l1_error, segment_average, total_area
from .particles import ParticleField, ShockParticle, normalize, rhs
from .fvref import FvGrid, fv_solve
from .reaction import BistableSource, ReactionOptions, evolve_reaction

__all__ = [
    "ConfigError", "DomainError", "IntegrationAccuracyError", "SolverError",
    "FluxFunction", "builtin_flux", "shock_speed",
    "EvolveOptions", "evolve",
    "Segment", "cell_averages", "l1_error", "segment_average", "total_area",
    "ParticleField", "ShockParticle", "normalize", "rhs",
    "FvGrid", "fv_solve",
    "BistableSource", "ReactionOptions", "evolve_reaction",
]
