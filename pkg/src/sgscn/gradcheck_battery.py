"""Finite-difference checks for every differentiable op, run over many seeds.

Inputs are drawn from N(0,1); values within 2h of a ReLU kink or an exact
L1 tie are nudged away so the central difference stays two-sided.
"""

from __future__ import annotations

import numpy as np

from .losses import (LossWeights, context_consistency_loss, cross_entropy_loss,
                     sparse_spatial_loss, total_loss)
from .network import SegNetConfig, forward, init_params
from .tensor import (Tensor, channel_norm, conv2d, grad_check, relu,
                     softmax_channels)

DEFAULT_TOL = 1e-4


def _nudge_kinks(x: np.ndarray, h: float) -> np.ndarray:
    """Push values away from 0 so ReLU/|.| kinks don't straddle x +/- h."""
    x = x.copy()
    near = np.abs(x) < 2 * h
    x[near] = np.sign(x[near] + (x[near] == 0)) * 2.5 * h
    return x


def _jitter(x: np.ndarray, rng: np.random.Generator,
            amplitude: float = 1e-3) -> np.ndarray:
    """Break exact value ties (zero L1 differences) with small noise."""
    return x + rng.uniform(-amplitude, amplitude, size=x.shape)


def _network_kink_margin(params, image: np.ndarray) -> float:
    """Smallest distance of the network's piecewise-smooth state to a kink.

    Covers pre-ReLU activations (distance to 0) and adjacent softmax
    probability differences (the L1 spatial term's ties). Central
    differences are only valid when the perturbation cannot cross one of
    these, so probe images are redrawn until this margin is comfortable.
    """
    cfg = params.config
    x = Tensor(image)
    margin = np.inf
    last = len(params.weights) - 1
    for i, (w, b, g, s) in enumerate(zip(params.weights, params.biases,
                                         params.gains, params.shifts)):
        x = conv2d(x, w, b, stride=cfg.stride, pad=cfg.pad)
        x = channel_norm(x, cfg.eps_norm) * g + s
        if i < last:
            margin = min(margin, float(np.min(np.abs(x.data))))
            x = relu(x)
    p = softmax_channels(x).data
    margin = min(margin,
                 float(np.abs(p[:, 1:, :] - p[:, :-1, :]).min()),
                 float(np.abs(p[:, :, 1:] - p[:, :, :-1]).min()))
    return margin


def run_battery(num_seeds: int = 20, h: float = 1e-4, echo=None
                ) -> list[tuple[str, float, float]]:
    """Return (name, worst relative error, tolerance) per checked op."""
    results = []

    def check(name, errs, tol=DEFAULT_TOL):
        worst = max(errs)
        results.append((name, worst, tol))
        if echo is not None:
            status = "ok  " if worst < tol else "FAIL"
            echo(f"  [{status}] {name:28s} max rel err {worst:.3e} "
                 f"(tol {tol:.0e})")

    def seeds():
        return (np.random.default_rng(s) for s in range(num_seeds))

    errs = []
    for rng in seeds():
        w = Tensor(rng.normal(size=(3, 2, 3, 3)))
        b = Tensor(rng.normal(size=3))
        x = _nudge_kinks(rng.normal(size=(2, 5, 5)), h)
        errs.append(grad_check(lambda t: conv2d(t, w, b).sum(), x, h))
    check("conv2d", errs)

    errs = [grad_check(lambda t: (relu(t) * relu(t)).sum(),
                       _nudge_kinks(rng.normal(size=(4, 4)), h), h)
            for rng in seeds()]
    check("relu", errs)

    errs = []
    for rng in seeds():
        # a fixed random linear functional; the sum of squares of a
        # normalized map is nearly constant, which would make the true
        # gradient vanish and the relative error meaningless
        probe = rng.normal(size=(3, 4, 4))
        errs.append(grad_check(
            lambda t: (channel_norm(t) * probe).sum(),
            rng.normal(size=(3, 4, 4)), h))
    check("channel_norm", errs)

    errs = [grad_check(lambda t: (softmax_channels(t) ** 2).sum(),
                       rng.normal(size=(4, 3, 3)), h)
            for rng in seeds()]
    check("softmax_channels", errs)

    errs = []
    for rng in seeds():
        labels = rng.integers(0, 4, size=(5, 5))
        errs.append(grad_check(
            lambda t: cross_entropy_loss(softmax_channels(t), labels),
            rng.normal(size=(4, 5, 5)), h))
    check("cross_entropy_loss", errs)

    errs = [grad_check(
        lambda t: sparse_spatial_loss(softmax_channels(t)),
        _jitter(rng.normal(size=(3, 5, 5)), rng), h)
        for rng in seeds()]
    check("sparse_spatial_loss", errs)

    errs = [grad_check(
        lambda t: context_consistency_loss(softmax_channels(t)),
        rng.normal(size=(3, 5, 5)), h)
        for rng in seeds()]
    check("context_consistency_loss", errs)

    errs = []
    for rng in seeds():
        labels = rng.integers(0, 5, size=(6, 6))
        errs.append(grad_check(
            lambda t: total_loss(t, labels)[0],
            _jitter(rng.normal(size=(5, 6, 6)), rng), h))
    check("total_loss", errs)

    # composed: full network on a 1x8x8 input, gradient w.r.t. layer-0 weights
    errs = []
    for s in range(num_seeds):
        rng = np.random.default_rng(s)
        cfg = SegNetConfig(input_channels=1, filters=6)
        params = init_params(cfg, seed=s, dtype=np.float64)
        image = rng.uniform(0.05, 0.95, size=(1, 8, 8))
        for _ in range(100):
            if _network_kink_margin(params, image) > 2 * h:
                break
            image = rng.uniform(0.05, 0.95, size=(1, 8, 8))
        labels = rng.integers(0, cfg.filters, size=(8, 8))
        w0 = params.weights[0]

        def loss_of_w0(t):
            params.weights[0] = t
            out = forward(params, image)
            return total_loss(out, labels, LossWeights(1.0, 1.0, 1.0))[0]

        errs.append(grad_check(loss_of_w0, w0.data.copy(), h))
        params.weights[0] = w0
    check("network_total_loss", errs)

    return results
