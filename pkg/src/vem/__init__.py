"""Variation-evolving solver for free-terminal-state optimal control problems."""

__version__ = "0.1.0"

from .numerics import GridFunction, TimeGrid  # noqa: E402
from .problems import FREE, Fixed, OcpDefinition, Scaling, build_example1, build_example2, build_zero_cost  # noqa: E402
from .solver import COUPLED, PROJECTED, EvolutionConfig, EvolutionTrace, evolve, initial_feasible  # noqa: E402
from .trajectory import GridTrajectory  # noqa: E402

__all__ = [
    "__version__",
    "TimeGrid",
    "GridFunction",
    "GridTrajectory",
    "OcpDefinition",
    "Fixed",
    "FREE",
    "Scaling",
    "build_example1",
    "build_example2",
    "build_zero_cost",
    "EvolutionConfig",
    "EvolutionTrace",
    "COUPLED",
    "PROJECTED",
    "initial_feasible",
    "evolve",
]
