from .estimator import GRUClassifier, SAGRUClassifier, estimator_for, from_model
from .layers import AttentionParams, GruParams, attention_forward, gru_forward
from .model import (
    AdamState,
    ModelParams,
    init_model,
    load_checkpoint,
    model_forward,
    save_checkpoint,
    train,
)

__all__ = [
    "AdamState", "AttentionParams", "GRUClassifier", "GruParams", "ModelParams",
    "SAGRUClassifier", "attention_forward", "estimator_for", "from_model", "gru_forward",
    "init_model", "load_checkpoint", "model_forward", "save_checkpoint", "train",
]
