"""Zero-shot generalized category discovery on low-dimensional latent spaces."""
from .synthgen import GcdTask, GenConfig, generate_task
from .model import GCDformer, ModelConfig, TrainConfig, load_checkpoint, save_checkpoint, train, transform
from .metrics import gcd_metrics, hungarian_accuracy, kmeans

__all__ = [
    "GcdTask", "GenConfig", "generate_task",
    "GCDformer", "ModelConfig", "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
    "transform",
    "gcd_metrics", "hungarian_accuracy", "kmeans",
]
__version__ = "0.1.0"
