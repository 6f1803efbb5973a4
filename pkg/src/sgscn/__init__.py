"""Self-supervised per-image clustering network for unsupervised
segmentation, with a k-means baseline and evaluation metrics."""

__version__ = "0.1.0"

from .kmeans import KMeansConfig, kmeans_segment
from .losses import LossBreakdown, LossWeights, total_loss
from .metrics import EvalReport, evaluate
from .network import ParamSet, SegNetConfig, forward, init_params
from .tensor import Tensor, grad_check
from .train import TrainConfig, TrainTrace, ablation_run, train_single_image

__all__ = [
    "KMeansConfig", "kmeans_segment",
    "LossBreakdown", "LossWeights", "total_loss",
    "EvalReport", "evaluate",
    "ParamSet", "SegNetConfig", "forward", "init_params",
    "Tensor", "grad_check",
    "TrainConfig", "TrainTrace", "ablation_run", "train_single_image",
]
