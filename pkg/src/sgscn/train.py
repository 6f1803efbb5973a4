"""Per-image self-supervised training loop.

Each iteration: forward pass, argmax the response map into
pseudo-labels, evaluate the joint loss against those labels, backprop,
SGD step. Labels are recomputed fresh every iteration and treated as
constants. Training stops shortly after the distinct-label count
reaches the floor (a few extra polish steps sharpen the boundaries),
when the label map holds still for a window of iterations, or when the
iteration budget runs out.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import LossBreakdown, LossWeights, total_loss
from .network import ParamSet, SegNetConfig, forward, init_params
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; message carries the iteration and term values."""


@dataclass
class TrainConfig:
    """Optimizer, stopping, and loss-calibration settings for one image.

    `ss_gain` multiplies the spatial term per channel (the effective
    spatial weight is w_ss * ss_gain * filters over the channel-averaged
    term) and `cc_gain` multiplies the compactness term; both were
    calibrated so the default weights (1, 1, 1) segment well. The input
    image is centered by subtracting `input_center` before the first
    conv so the contrast midpoint maps to zero. `floor_patience` extra
    update steps run after the label count first reaches `min_labels`.
    """
    lr: float = 0.1
    momentum: float = 0.9
    max_iters: int = 500
    min_labels: int = 3
    stability_window: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    filters: int = 100
    num_layers: int = 3
    dtype: str = "float32"
    ss_gain: float = 22.0
    cc_gain: float = 2.5
    input_center: float = 0.5
    floor_patience: int = 3

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.min_labels < 2:
            raise ValueError(f"min_labels must be >= 2, got {self.min_labels}")
        if self.stability_window < 1:
            raise ValueError(
                f"stability_window must be >= 1, got {self.stability_window}")
        if self.floor_patience < 0:
            raise ValueError(
                f"floor_patience must be >= 0, got {self.floor_patience}")


@dataclass
class TrainTrace:
    losses: list[LossBreakdown] = field(default_factory=list)
    num_labels: list[int] = field(default_factory=list)
    changed_fraction: list[float] = field(default_factory=list)
    final_labels: np.ndarray | None = None
    stop_reason: str = ""

    def __len__(self) -> int:
        return len(self.losses)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "ce", "ss", "cc", "total",
                             "num_labels", "changed_fraction"])
            for i, (lb, n, cf) in enumerate(
                    zip(self.losses, self.num_labels, self.changed_fraction)):
                writer.writerow([i, f"{lb.ce:.6f}", f"{lb.ss:.6f}",
                                 f"{lb.cc:.6f}", f"{lb.total:.6f}",
                                 n, f"{cf:.6f}"])


def assign_labels(s_hat) -> np.ndarray:
    """Per-pixel argmax over channels; ties go to the lowest channel index."""
    data = s_hat.data if isinstance(s_hat, Tensor) else np.asarray(s_hat)
    return np.argmax(data, axis=0)


def train_single_image(image: np.ndarray, config: TrainConfig,
                       params: ParamSet | None = None
                       ) -> tuple[np.ndarray, TrainTrace]:
    """Train the network on one image; returns the final label map and trace.

    Deterministic given (image, config). A pre-built ParamSet may be
    passed to resume or to share initialization across runs.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    dtype = np.dtype(config.dtype)
    image = image.astype(dtype)
    if params is None:
        net_cfg = SegNetConfig(input_channels=image.shape[0],
                               num_layers=config.num_layers,
                               filters=config.filters)
        params = init_params(net_cfg, config.seed, dtype=dtype)

    x = Tensor(image - dtype.type(config.input_center))
    trace = TrainTrace()
    prev_labels: np.ndarray | None = None
    stable_count = 0
    floor_count = 0
    ss_scale = config.ss_gain * config.filters
    cc_scale = config.cc_gain

    for it in range(config.max_iters):
        s_hat = forward(params, x)
        labels = assign_labels(s_hat)
        loss, breakdown = total_loss(s_hat, labels, config.weights,
                                     ss_scale=ss_scale, cc_scale=cc_scale)
        if not np.isfinite(breakdown.total):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}: ce={breakdown.ce}, "
                f"ss={breakdown.ss}, cc={breakdown.cc}")

        n_labels = len(np.unique(labels))
        if prev_labels is None:
            changed = 1.0
        else:
            changed = float(np.mean(labels != prev_labels))
        trace.losses.append(breakdown)
        trace.num_labels.append(n_labels)
        trace.changed_fraction.append(changed)

        if n_labels <= config.min_labels:
            floor_count += 1
            if floor_count > config.floor_patience:
                trace.final_labels = labels
                trace.stop_reason = "label_floor"
                return labels, trace

        stable_count = stable_count + 1 if changed == 0.0 else 0
        if stable_count >= config.stability_window:
            trace.final_labels = labels
            trace.stop_reason = "stable"
            return labels, trace

        loss.backward()
        params.step(config.lr, config.momentum)
        prev_labels = labels

    # report labels from a final forward pass after the last update
    labels = assign_labels(forward(params, x))
    trace.final_labels = labels
    trace.stop_reason = "max_iters"
    return labels, trace


ABLATION_WEIGHTS = (
    LossWeights(1.0, 0.0, 0.0),
    LossWeights(1.0, 1.0, 0.0),
    LossWeights(1.0, 1.0, 1.0),
)


def ablation_run(image: np.ndarray, config: TrainConfig
                 ) -> list[tuple[np.ndarray, TrainTrace]]:
    """Train three times from the same seed with CE, CE+SS, and CE+SS+CC."""
    out = []
    for w in ABLATION_WEIGHTS:
        out.append(train_single_image(image, replace(config, weights=w)))
    return out
