"""Segmentation evaluation: Dice, Hammoude distance, XOR measure.

Predictions come from multi-cluster label maps, so evaluation first picks
the single cluster with the largest overlap with the ground-truth mask
(backgrounds are big clusters too and would otherwise dominate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EvalReport:
    matched_cluster_id: int
    dsc: float
    hm: float
    xor: float
    tp: int
    fp: int
    fn: int


def match_largest_overlap(labels: np.ndarray,
                          gt: np.ndarray) -> tuple[int, np.ndarray]:
    """Cluster id with maximal |cluster ∩ gt| and its binary mask.

    Ties break toward the smaller cluster, then the smaller id.
    """
    labels = np.asarray(labels)
    gt = np.asarray(gt, dtype=bool)
    if labels.shape != gt.shape:
        raise ValueError(f"shape mismatch: labels {labels.shape} vs "
                         f"gt {gt.shape}")
    if not gt.any():
        raise ValueError("ground-truth mask is empty")
    best_id, best_key = -1, None
    for cid in np.unique(labels):
        mask = labels == cid
        overlap = int(np.count_nonzero(mask & gt))
        key = (-overlap, int(np.count_nonzero(mask)), int(cid))
        if best_key is None or key < best_key:
            best_id, best_key = int(cid), key
    return best_id, labels == best_id


def _counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, fp, fn


def dsc(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice coefficient 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty."""
    tp, fp, fn = _counts(pred, gt)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def hammoude(pred: np.ndarray, gt: np.ndarray) -> float:
    """Hammoude distance (|A∪B| − |A∩B|) / |A∪B|; 0.0 when both empty."""
    tp, fp, fn = _counts(pred, gt)
    union = tp + fp + fn
    return 0.0 if union == 0 else (fp + fn) / union


def xor_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """(fp + fn) / |gt|; exceeds 1 under gross over-segmentation."""
    tp, fp, fn = _counts(pred, gt)
    gt_size = tp + fn
    if gt_size == 0:
        raise ValueError("XOR measure undefined for empty ground truth")
    return (fp + fn) / gt_size


def evaluate(labels: np.ndarray, gt: np.ndarray) -> EvalReport:
    """Match the largest-overlap cluster, then score it against gt."""
    cid, pred = match_largest_overlap(labels, gt)
    tp, fp, fn = _counts(pred, gt)
    return EvalReport(
        matched_cluster_id=cid,
        dsc=dsc(pred, gt),
        hm=hammoude(pred, gt),
        xor=xor_measure(pred, gt),
        tp=tp, fp=fp, fn=fn,
    )
