from .network import (
    Network,
    LayerSpec,
    default_architecture,
    init_network,
    load_model,
    save_model,
    soft_cross_entropy,
    softmax,
)
from .optim import cosine_lr, sgd_step
from .train import TARGET_MODES, EpochRecord, TrainConfig, make_targets, predict, train

__all__ = [
    "Network",
    "LayerSpec",
    "default_architecture",
    "init_network",
    "load_model",
    "save_model",
    "soft_cross_entropy",
    "softmax",
    "cosine_lr",
    "sgd_step",
    "TARGET_MODES",
    "EpochRecord",
    "TrainConfig",
    "make_targets",
    "predict",
    "train",
]
