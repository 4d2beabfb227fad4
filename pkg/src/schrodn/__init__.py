"""Numerical toolkit for stable recovery of magnetic and advection terms in
the dynamical Schrodinger equation from boundary measurements.

Modules
-------
geometry        metrics on the disk, geodesics, inflow bundle
calculus        polar grids, fields and differential operators
raytransform    geodesic X-ray transforms and their inversion
hodge           Dirichlet Poisson solver and solenoidal decomposition
schrodinger     Crank-Nicolson solvers and discrete DN maps
optics          geometric-optics probes and phase extraction
reconstruction  recovery chains, stability harness, Carleman check
io, config, cli serialization, experiment configs and the command line
"""

from .errors import (ConditioningError, ConfigError, DomainError, FieldTooLargeError,
                     MetricError, NonlinearityError, NonTrappingError, PhaseUnwrapError,
                     SimplicityError, SolverStepError, ToolkitError)
from .geometry import MetricField, conformal, euclidean, metric_from_preset
from .calculus import CovectorField, PolarGrid, ScalarField, VectorField

__version__ = "0.1.0"

__all__ = [
    "ConditioningError", "ConfigError", "DomainError", "FieldTooLargeError", "MetricError",
    "NonlinearityError", "NonTrappingError", "PhaseUnwrapError", "SimplicityError",
    "SolverStepError", "ToolkitError", "MetricField", "conformal", "euclidean",
    "metric_from_preset", "CovectorField", "PolarGrid", "ScalarField", "VectorField",
]
