"""Differentiable loss terms for self-supervised pixel clustering.

Three terms share one channel-softmax probability map:

* cross-entropy against the current argmax pseudo-labels,
* an L1 penalty on horizontal/vertical differences (anisotropic total
  variation) that favors spatially coherent regions,
* a compactness term: the mass-weighted mean squared distance of each
  cluster's probability mass to that cluster's spatial centroid.

All terms are evaluated on the softmaxed map so the "spatial probability
distribution" reading of the centroid is valid (the raw normalized
response map is signed).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ShapeError, softmax_channels

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for the three terms; (1, 1, 1) is the plain sum."""
    w_ce: float = 1.0
    w_ss: float = 1.0
    w_cc: float = 1.0

    def __post_init__(self):
        for name in ("w_ce", "w_ss", "w_cc"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    ce: float
    ss: float
    cc: float
    total: float


def _check_probs(probs: Tensor) -> tuple[int, int, int]:
    if probs.data.ndim != 3:
        raise ShapeError(f"expected (C, H, W) probabilities, got {probs.shape}")
    return probs.shape


def cross_entropy_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of each pixel's assigned channel.

    `labels` is a (H, W) integer map; it is treated as a constant (no
    gradient flows through the argmax that produced it). The log is
    clamped at ln(1e-12).
    """
    c, h, w = _check_probs(probs)
    labels = np.asarray(labels)
    if labels.shape != (h, w):
        raise ShapeError(f"labels shape {labels.shape} != spatial dims {(h, w)}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(
            f"labels out of range [0, {c}): min={labels.min()}, max={labels.max()}")
    onehot = np.zeros((c, h, w), dtype=probs.dtype)
    onehot[labels, np.arange(h)[:, None], np.arange(w)[None, :]] = 1.0
    logp = probs.clamp_min(PROB_FLOOR).log()
    return -(logp * onehot).sum() / float(h * w)


def sparse_spatial_loss(s: Tensor, normalize: bool = True,
                        strict_bounds: bool = False) -> Tensor:
    """L1 norm of vertical and horizontal neighbor differences.

    Default covers every adjacent pair (standard anisotropic TV) and
    divides by C*H*W. `strict_bounds` instead sums |S[k+1,l]-S[k,l]| +
    |S[k,l+1]-S[k,l]| over the joint interior index range only, without
    normalization; it exists for oracle comparisons.
    """
    c, h, w = _check_probs(s)
    if h < 2 or w < 2:
        warnings.warn(f"spatial loss on degenerate {h}x{w} map is 0",
                      stacklevel=2)
        return Tensor(np.zeros((), dtype=s.dtype))
    if strict_bounds:
        # joint interior range skips the last row/column pairs
        dh = (s[:, 1:, :w - 1] - s[:, :h - 1, :w - 1]).abs().sum()
        dw = (s[:, :h - 1, 1:] - s[:, :h - 1, :w - 1]).abs().sum()
        return dh + dw
    dh = (s[:, 1:, :] - s[:, :h - 1, :]).abs().sum()
    dw = (s[:, :, 1:] - s[:, :, :w - 1]).abs().sum()
    total = dh + dw
    if normalize:
        total = total / float(c * h * w)
    return total


def cluster_centroids(probs: Tensor) -> tuple[Tensor, Tensor]:
    """Expected (row, col) pixel coordinate under each channel's mass.

    Returns two (C,) tensors of 0-indexed coordinates. Channel masses are
    floored so empty channels stay well-defined and differentiable.
    """
    c, h, w = _check_probs(probs)
    rows = np.arange(h, dtype=probs.dtype)[None, :, None]
    cols = np.arange(w, dtype=probs.dtype)[None, None, :]
    mass = probs.sum(axis=(1, 2)).clamp_min(PROB_FLOOR)
    cr = (probs * rows).sum(axis=(1, 2)) / mass
    cc = (probs * cols).sum(axis=(1, 2)) / mass
    return cr, cc


def context_consistency_loss(probs: Tensor, normalize: bool = True,
                             stop_centroid_gradient: bool = False) -> Tensor:
    """Per-channel mass-weighted mean squared distance to the channel
    centroid, summed over channels.

    By default the centroids are differentiated through; the
    `stop_centroid_gradient` flag freezes them per evaluation for
    comparison. Normalization divides by H^2 + W^2 so the term is
    comparable across image sizes.
    """
    c, h, w = _check_probs(probs)
    cr, cc = cluster_centroids(probs)
    if stop_centroid_gradient:
        cr, cc = cr.detach(), cc.detach()
    rows = np.arange(h, dtype=probs.dtype)[None, :, None]
    cols = np.arange(w, dtype=probs.dtype)[None, None, :]
    dr = rows - cr.reshape(c, 1, 1)
    dc = cols - cc.reshape(c, 1, 1)
    dist2 = dr * dr + dc * dc
    mass = probs.sum(axis=(1, 2)).clamp_min(PROB_FLOOR)
    per_channel = (dist2 * probs).sum(axis=(1, 2)) / mass
    total = per_channel.sum()
    if normalize:
        total = total / float(h * h + w * w)
    return total


def total_loss(logits: Tensor, labels: np.ndarray,
               weights: LossWeights = LossWeights(),
               normalize: bool = True,
               stop_centroid_gradient: bool = False,
               ss_scale: float = 1.0,
               cc_scale: float = 1.0
               ) -> tuple[Tensor, LossBreakdown]:
    """Softmax the response map once and combine the three weighted terms.

    `ss_scale` and `cc_scale` are fixed calibration factors folded into
    the spatial and compactness terms before weighting; the breakdown
    reports the scaled values so total == w_ce*ce + w_ss*ss + w_cc*cc
    always holds. Returns the scalar loss node (for backward) and a
    float breakdown. Terms with zero weight are skipped so they
    contribute neither value nor gradient.
    """
    probs = softmax_channels(logits)
    zero = Tensor(np.zeros((), dtype=logits.dtype))
    ce = cross_entropy_loss(probs, labels) if weights.w_ce > 0 else zero
    ss = (ss_scale * sparse_spatial_loss(probs, normalize=normalize)
          if weights.w_ss > 0 else zero)
    cc = (cc_scale * context_consistency_loss(
        probs, normalize=normalize,
        stop_centroid_gradient=stop_centroid_gradient)
        if weights.w_cc > 0 else zero)
    total = weights.w_ce * ce + weights.w_ss * ss + weights.w_cc * cc
    return total, LossBreakdown(ce=ce.item(), ss=ss.item(), cc=cc.item(),
                                total=total.item())
