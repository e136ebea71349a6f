"""Pruning-induced embedding drift as an unsupervised image-utility score."""

from .kernels import BACKEND
from .model import Model, forward, load_model, save_model
from .scoring import batch_score, drift, quality

__version__ = "0.1.0"

__all__ = ["BACKEND", "Model", "batch_score", "drift", "forward", "load_model", "quality", "save_model"]
