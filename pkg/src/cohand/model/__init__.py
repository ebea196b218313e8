from .config import ModelConfig
from .network import (
    ConditionalHandlingModel,
    ContextEncoding,
    DummyLstmModel,
    GaussianLatent,
    RolloutResult,
    StepPrediction,
    attention_from_embeddings,
    build_model,
    sample_latent,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    "ModelConfig",
    "ConditionalHandlingModel",
    "DummyLstmModel",
    "ContextEncoding",
    "GaussianLatent",
    "StepPrediction",
    "RolloutResult",
    "attention_from_embeddings",
    "build_model",
    "sample_latent",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
]
