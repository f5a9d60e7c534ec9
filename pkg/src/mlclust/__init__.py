"""Maximum-likelihood correlation clustering."""

from .errors import CsvParseError, DegenerateInputWarning, InvalidInputError, NumericalError
from .ga import GaConfig, GaResult, TerminationReason, evolve
from .likelihood import canonicalize, cluster_stats, log_likelihood
from .mst import build_forest, export_dot
from .oracle import brute_force_max, simulated_annealing
from .synth import PlantedSpec, generate_noh, training_set_40

__version__ = "0.1.0"

__all__ = [
    "CsvParseError",
    "DegenerateInputWarning",
    "GaConfig",
    "GaResult",
    "InvalidInputError",
    "NumericalError",
    "PlantedSpec",
    "TerminationReason",
    "brute_force_max",
    "build_forest",
    "canonicalize",
    "cluster_stats",
    "evolve",
    "export_dot",
    "generate_noh",
    "log_likelihood",
    "simulated_annealing",
    "training_set_40",
]
