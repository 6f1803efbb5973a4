"""k-means pixel clustering baseline: Lloyd's algorithm with k-means++ init."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansConfig:
    k: int = 3
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0
    feature_mode: str = "rgb"  # "rgb" or "rgb_xy"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.feature_mode not in ("rgb", "rgb_xy"):
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")


def pixel_features(image: np.ndarray, feature_mode: str) -> np.ndarray:
    """Flatten a (C, H, W) image to per-pixel feature rows.

    rgb: channel values only; rgb_xy: channels plus row/col coordinates
    scaled to [0, 1].
    """
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    feats = image.reshape(c, h * w).T.astype(np.float64)
    if feature_mode == "rgb_xy":
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        ys = rows.reshape(-1, 1) / max(h - 1, 1)
        xs = cols.reshape(-1, 1) / max(w - 1, 1)
        feats = np.hstack([feats, ys, xs])
    return feats


def _kmeanspp_init(feats: np.ndarray, k: int,
                   rng: np.random.Generator) -> np.ndarray:
    n = feats.shape[0]
    centroids = np.empty((k, feats.shape[1]))
    centroids[0] = feats[rng.integers(n)]
    d2 = np.sum((feats - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = feats[rng.integers(n)]
        else:
            centroids[j] = feats[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((feats - centroids[j]) ** 2, axis=1))
    return centroids


def lloyd(feats: np.ndarray, centroids: np.ndarray, max_iters: int,
          tol: float) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations from given centroids.

    Returns (labels, centroids, per-iteration inertia). Empty clusters are
    re-seeded from the point farthest from its assigned centroid.
    """
    k = centroids.shape[0]
    centroids = centroids.copy()
    inertias: list[float] = []
    labels = np.zeros(feats.shape[0], dtype=np.int64)
    for _ in range(max_iters):
        d2 = np.sum((feats[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(feats.shape[0]), labels]
        inertias.append(float(point_d2.sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = feats[members].mean(axis=0)
            else:
                far = int(np.argmax(point_d2))
                new_centroids[j] = feats[far]
                point_d2 = point_d2.copy()
                point_d2[far] = 0.0
        movement = float(np.max(np.sqrt(
            np.sum((new_centroids - centroids) ** 2, axis=1))))
        centroids = new_centroids
        if movement < tol:
            break
    d2 = np.sum((feats[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    inertias.append(float(d2[np.arange(feats.shape[0]), labels].sum()))
    return labels, centroids, inertias


def kmeans_segment(image: np.ndarray, config: KMeansConfig,
                   return_details: bool = False):
    """Cluster pixels into k groups; returns a (H, W) label map.

    With `return_details`, also returns (centroids, inertia trace).
    """
    if image.ndim == 2:
        image = image[None]
    _, h, w = image.shape
    if config.k > h * w:
        raise ValueError(f"k={config.k} exceeds pixel count {h * w}")
    feats = pixel_features(image, config.feature_mode)
    rng = np.random.default_rng(config.seed)
    centroids = _kmeanspp_init(feats, config.k, rng)
    labels, centroids, inertias = lloyd(feats, centroids,
                                        config.max_iters, config.tol)
    label_map = labels.reshape(h, w)
    if return_details:
        return label_map, centroids, inertias
    return label_map
