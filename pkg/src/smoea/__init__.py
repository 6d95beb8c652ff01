"""Sub-network multi-objective evolutionary filter pruning."""

from .exceptions import SmoeaError
from .network import (
    FilterMask,
    Network,
    SubNetwork,
    build_toy_cnn,
    build_vgg14,
    load_model,
    save_model,
)
from .objectives import EvaluationContext, ObjectiveVector
from .evolution import EvolutionConfig, evolve, evolve_subnetwork, knee_point
from .pipeline import FineTuneConfig, GroupPlan, PruneReport, smoea_prune

__all__ = [
    "SmoeaError",
    "FilterMask",
    "Network",
    "SubNetwork",
    "build_toy_cnn",
    "build_vgg14",
    "load_model",
    "save_model",
    "EvaluationContext",
    "ObjectiveVector",
    "EvolutionConfig",
    "evolve",
    "evolve_subnetwork",
    "knee_point",
    "FineTuneConfig",
    "GroupPlan",
    "PruneReport",
    "smoea_prune",
]

__version__ = "0.1.0"
