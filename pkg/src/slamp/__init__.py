"""Integrate-and-fire SNN simulation with temporal layer-adaptive magnitude pruning."""
from .dynamics import NeuronConfig, Network, build_network, network_forward, reset_network
from .numerics import BACKEND
from .pruning import (
    PruneSchedule,
    Stage,
    allocate_and_mask,
    apply_prune,
    connectivity,
    lamp_scores,
    slamp_scores,
)
from .training import OptimConfig, SurrogateConfig, train_epochs

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Network",
    "NeuronConfig",
    "OptimConfig",
    "PruneSchedule",
    "Stage",
    "SurrogateConfig",
    "allocate_and_mask",
    "apply_prune",
    "build_network",
    "connectivity",
    "lamp_scores",
    "network_forward",
    "reset_network",
    "slamp_scores",
    "train_epochs",
]
