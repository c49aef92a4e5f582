"""Training targets derived from ground-truth instances.

Snippet i covers the interval [i, i + 1). A snippet's overlap ratio with a
region is |snippet ∩ region| / |snippet|; labels are positive when the
best ratio over all instances exceeds 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GroundTruth
from .heads import valid_mask

BOUNDARY_HALF_WIDTH = 1.5   # in snippets


@dataclass
class LabelSet:
    g_start: np.ndarray      # (T,) {0, 1}
    g_end: np.ndarray        # (T,) {0, 1}
    g_action: np.ndarray     # (T,) {0, 1}
    completeness: np.ndarray  # (D, T) in [0, 1]
    valid: np.ndarray        # (D, T) bool


def _instances(gt) -> np.ndarray:
    inst = gt.instances if isinstance(gt, GroundTruth) else gt
    return np.asarray(list(inst), dtype=np.float64).reshape(-1, 2)


def max_ior(regions: np.ndarray, T: int) -> np.ndarray:
    """Best overlap ratio of every snippet interval with any of ``regions`` (n, 2)."""
    if len(regions) == 0:
        return np.zeros(T)
    lo = np.arange(T, dtype=np.float64)[:, None]
    inter = np.minimum(lo + 1.0, regions[None, :, 1]) - np.maximum(lo, regions[None, :, 0])
    return np.clip(inter, 0.0, None).max(axis=1)


def assign_boundary_labels(gt, T: int):
    inst = _instances(gt)
    hw = BOUNDARY_HALF_WIDTH
    starts = np.stack([inst[:, 0] - hw, inst[:, 0] + hw], axis=1)
    ends = np.stack([inst[:, 1] - hw, inst[:, 1] + hw], axis=1)
    g_s = (max_ior(starts, T) > 0.5).astype(np.float64)
    g_e = (max_ior(ends, T) > 0.5).astype(np.float64)
    return g_s, g_e


def assign_actionness_labels(gt, T: int) -> np.ndarray:
    return (max_ior(_instances(gt), T) > 0.5).astype(np.float64)


def assign_completeness_labels(gt, T: int, D: int) -> np.ndarray:
    """Max temporal IoU of each valid proposal [j, j + d + 1] with any instance."""
    inst = _instances(gt)
    valid = valid_mask(D, T)
    out = np.zeros((D, T))
    if len(inst) == 0:
        return out
    dur = np.arange(1, D + 1, dtype=np.float64)[:, None, None]
    s = np.arange(T, dtype=np.float64)[None, :, None]
    e = s + dur
    gs, ge = inst[:, 0][None, None, :], inst[:, 1][None, None, :]
    inter = np.clip(np.minimum(e, ge) - np.maximum(s, gs), 0.0, None)
    union = (e - s) + (ge - gs) - inter
    out = (inter / union).max(axis=2)
    return np.where(valid, out, 0.0)


def assign_labels(gt, T: int, D: int) -> LabelSet:
    g_s, g_e = assign_boundary_labels(gt, T)
    return LabelSet(g_s, g_e, assign_actionness_labels(gt, T),
                    assign_completeness_labels(gt, T, D), valid_mask(D, T))
