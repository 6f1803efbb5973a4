"""The convolutional segmentation network.

Each block is conv -> per-channel normalization -> learnable per-channel
affine (gain and shift) -> ReLU; the last block omits the ReLU so the
response map keeps its full signed range. The per-pixel argmax of the
final map produces the cluster labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeError, channel_norm, conv2d, relu, sgd_step

CHECKPOINT_MAGIC = b"SGSN"
CHECKPOINT_VERSION = 2


@dataclass
class SegNetConfig:
    """Architecture hyperparameters.

    `filters` is both the width of every layer and the maximum number of
    clusters the model can express.
    """
    input_channels: int = 3
    num_layers: int = 3
    filters: int = 100
    kernel: int = 3
    stride: int = 1
    pad: int = 1
    eps_norm: float = 1e-5

    def __post_init__(self):
        if self.filters < 2:
            raise ValueError(f"filters must be >= 2, got {self.filters}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.input_channels not in (1, 3):
            raise ValueError(
                f"input_channels must be 1 or 3, got {self.input_channels}")


@dataclass
class ParamSet:
    """Per-layer conv weights, biases, affine gains and shifts, plus SGD
    momentum buffers."""
    config: SegNetConfig
    weights: list[Tensor]
    biases: list[Tensor]
    gains: list[Tensor]
    shifts: list[Tensor]
    velocities: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.velocities:
            self.velocities = [np.zeros_like(t.data) for t in self.parameters()]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b, g, s in zip(self.weights, self.biases,
                              self.gains, self.shifts):
            out.extend((w, b, g, s))
        return out

    def step(self, lr: float, momentum: float) -> None:
        sgd_step(self.parameters(), self.velocities, lr, momentum)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for p in self.parameters())


def init_params(config: SegNetConfig, seed: int,
                dtype=np.float32) -> ParamSet:
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases,
    unit gains, zero shifts."""
    rng = np.random.default_rng(seed)
    weights, biases, gains, shifts = [], [], [], []
    c_in = config.input_channels
    for _ in range(config.num_layers):
        fan_in = c_in * config.kernel * config.kernel
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound,
                        size=(config.filters, c_in, config.kernel, config.kernel))
        weights.append(Tensor(w.astype(dtype), requires_grad=True))
        biases.append(Tensor(np.zeros(config.filters, dtype=dtype),
                             requires_grad=True))
        gains.append(Tensor(np.ones((config.filters, 1, 1), dtype=dtype),
                            requires_grad=True))
        shifts.append(Tensor(np.zeros((config.filters, 1, 1), dtype=dtype),
                             requires_grad=True))
        c_in = config.filters
    return ParamSet(config, weights, biases, gains, shifts)


def forward(params: ParamSet, image) -> Tensor:
    """Run the network: (conv2d -> channel_norm -> affine -> ReLU) per
    layer, with the ReLU dropped on the final layer.

    Returns the response map (clusters, H, W); its per-pixel argmax is
    the cluster assignment.
    """
    cfg = params.config
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.data.ndim != 3:
        raise ShapeError(f"image must be (C, H, W), got {x.shape}")
    if x.shape[1] < cfg.kernel or x.shape[2] < cfg.kernel:
        raise ShapeError(f"image {x.shape[1]}x{x.shape[2]} smaller than "
                         f"{cfg.kernel}x{cfg.kernel} kernel")
    last = len(params.weights) - 1
    for i, (w, b, g, s) in enumerate(zip(params.weights, params.biases,
                                         params.gains, params.shifts)):
        x = conv2d(x, w, b, stride=cfg.stride, pad=cfg.pad)
        x = channel_norm(x, cfg.eps_norm) * g + s
        if i < last:
            x = relu(x)
    return x


# ----------------------------------------------------------------------
# checkpoints: magic, version u32, layer count u32, per-layer shape u32s,
# then per layer the conv weights, biases, gains and shifts as
# little-endian float32.


def save_checkpoint(path, params: ParamSet) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params.weights)))
        for w in params.weights:
            fh.write(struct.pack("<IIII", *w.shape))
        for w, b, g, s in zip(params.weights, params.biases,
                              params.gains, params.shifts):
            fh.write(w.data.astype("<f4").tobytes())
            fh.write(b.data.astype("<f4").tobytes())
            fh.write(g.data.astype("<f4").tobytes())
            fh.write(s.data.astype("<f4").tobytes())


def load_checkpoint(path, config: SegNetConfig) -> ParamSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic {magic!r}")
        version, n_layers = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        shapes = [struct.unpack("<IIII", fh.read(16)) for _ in range(n_layers)]
        weights, biases, gains, shifts = [], [], [], []
        for shape in shapes:
            n = int(np.prod(shape))
            filters = shape[0]
            w = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            b = np.frombuffer(fh.read(4 * filters), dtype="<f4")
            g = np.frombuffer(fh.read(4 * filters), dtype="<f4")
            s = np.frombuffer(fh.read(4 * filters), dtype="<f4")
            weights.append(Tensor(w.copy(), requires_grad=True))
            biases.append(Tensor(b.copy(), requires_grad=True))
            gains.append(Tensor(g.copy().reshape(filters, 1, 1),
                                requires_grad=True))
            shifts.append(Tensor(s.copy().reshape(filters, 1, 1),
                                 requires_grad=True))
    return ParamSet(config, weights, biases, gains, shifts)
