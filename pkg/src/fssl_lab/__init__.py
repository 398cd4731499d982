"""Desk-scale federated self-supervised learning sandbox.

Simulates MoCo-style contrastive training across federated clients, a
hallucinated-positive backdoor attacker with dual update constraints,
robust-aggregation defenses, and linear-probe ACC/ASR evaluation.
"""
from .config import ExperimentConfig, from_dict, load_config
from .core import RngStream, cosine_sim, normalize, spherical_kmeans
from .data import Dataset, augment_pair, ingest_cifar10, synth_blobs
from .encoder import (
    EncoderPair,
    LayerLayout,
    ModelParams,
    backward,
    forward,
    init,
    load_checkpoint,
    momentum_update,
    save_checkpoint,
)
from .federation import (
    RoundMetrics,
    dirichlet_partition,
    fedavg,
    run_experiment,
    run_round,
)
from .losses import LossBreakdown, MemoryQueue, info_nce, loss_bfe, loss_he, total_loss
from .poisoning import (
    GradStats,
    TriggerSpec,
    embed_trigger,
    make_poison_set,
    mask_to_bottom_k,
    model_replace,
    project_eps_ball,
    update_zeta,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EncoderPair",
    "ExperimentConfig",
    "GradStats",
    "LayerLayout",
    "LossBreakdown",
    "MemoryQueue",
    "ModelParams",
    "RngStream",
    "RoundMetrics",
    "TriggerSpec",
    "augment_pair",
    "backward",
    "cosine_sim",
    "dirichlet_partition",
    "embed_trigger",
    "fedavg",
    "forward",
    "from_dict",
    "info_nce",
    "ingest_cifar10",
    "init",
    "load_checkpoint",
    "load_config",
    "loss_bfe",
    "loss_he",
    "make_poison_set",
    "mask_to_bottom_k",
    "model_replace",
    "momentum_update",
    "normalize",
    "project_eps_ball",
    "run_experiment",
    "run_round",
    "save_checkpoint",
    "spherical_kmeans",
    "synth_blobs",
    "total_loss",
    "update_zeta",
]
