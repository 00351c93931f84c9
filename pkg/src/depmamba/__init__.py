"""Long-sequence speech depression-severity estimation with dual-path Bi-Mamba blocks."""

from .config import ModelConfig, TrainConfig
from .model import DepressionEstimator

__all__ = ["DepressionEstimator", "ModelConfig", "TrainConfig"]
__version__ = "0.1.0"
