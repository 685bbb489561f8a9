"""Streaming transducer with chunk-wise attention in the joint network, on numpy."""
from .model import SOS, Model, ModelConfig, Vocabulary

__all__ = ["SOS", "Model", "ModelConfig", "Vocabulary"]
__version__ = "0.1.0"
