"""Two-strategy spatial games on the torus: simulators, couplings, duals and bounds."""

__version__ = "0.1.0"

from .errors import DomainError, EstimationError, ResourceError, WindowViolation
from .lattice import Configuration, TorusGeometry
from .payoff import FitnessSpec, PayoffMatrix, SelectionSpec

__all__ = ["Configuration", "DomainError", "EstimationError", "FitnessSpec", "PayoffMatrix",
           "ResourceError", "SelectionSpec", "TorusGeometry", "WindowViolation"]
