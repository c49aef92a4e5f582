"""Training objectives: weighted binary logistic loss (boundaries, actionness,
completeness classification), completeness regression, and their weighted sum."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .tensor import ConfigError, Tensor, as_tensor, clamp, log, tsum

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    completeness_reg: float = 10.0   # lambda
    actionness: float = 1.0          # lambda_1
    start: float = 1.0               # lambda_2
    end: float = 1.0                 # lambda_3

    def validate(self) -> None:
        for k, v in vars(self).items():
            if v < 0:
                raise ConfigError(f"loss weight {k} must be nonnegative, got {v}")


def _class_weights(g: np.ndarray, mask: np.ndarray):
    n = mask.sum()
    pos = (g * mask).sum()
    neg = ((1.0 - g) * mask).sum()
    if pos == 0 or neg == 0:
        logger.warning("weighted_bl_loss: labels are all %s; the missing class weight is set to 0",
                       "negative" if pos == 0 else "positive")
    a_pos = n / pos if pos > 0 else 0.0
    a_neg = n / neg if neg > 0 else 0.0
    return a_pos, a_neg, n


def weighted_bl_loss(p, g, mask=None) -> Tensor:
    """-(1/n) * sum(a+ * g * log p + a- * (1 - g) * log(1 - p)) over masked entries,
    with a+ = n / #positives and a- = n / #negatives."""
    p = as_tensor(p)
    g = np.asarray(g, dtype=np.float64)
    mask = np.ones(p.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    if g.shape != p.shape or mask.shape != p.shape:
        raise ValueError(f"prediction {p.shape}, labels {g.shape} and mask {mask.shape} must agree")
    a_pos, a_neg, n = _class_weights(g, mask)
    if n == 0:
        raise ConfigError("weighted_bl_loss: no entries to score")
    pc = clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    w_pos = Tensor(a_pos * g * mask)
    w_neg = Tensor(a_neg * (1.0 - g) * mask)
    ll = tsum(w_pos * log(pc) + w_neg * log(1.0 - pc))
    return ll * (-1.0 / n)


def actionness_loss(p_a, g_action) -> Tensor:
    return weighted_bl_loss(p_a, g_action)


def completeness_loss(m_cc, m_cr, g_c, valid, lam: float = 10.0, pos_threshold: float = 0.9):
    """Classification on G^c > ``pos_threshold`` plus ``lam`` * MSE, both over
    valid cells. Returns (total, L_c, L_r)."""
    m_cc, m_cr = as_tensor(m_cc), as_tensor(m_cr)
    valid = np.asarray(valid, dtype=np.float64)
    n = valid.sum()
    if n == 0:
        raise ConfigError("completeness_loss: map has no valid cells")
    g_c = np.asarray(g_c, dtype=np.float64)
    l_c = weighted_bl_loss(m_cc, (g_c > pos_threshold).astype(np.float64), valid)
    diff = (m_cr - Tensor(g_c)) * Tensor(valid)
    l_r = tsum(diff * diff) * (1.0 / n)
    total = l_c + l_r * lam if lam else l_c
    return total, l_c, l_r


def total_loss(components: dict, weights: LossWeights | None = None):
    """L_com + l1 * L_a + l2 * L_s + l3 * L_e.

    ``components`` maps ``completeness``, ``actionness``, ``start``, ``end``
    to scalar tensors (or floats). Terms with zero weight are left out of the
    graph. Returns (total, {name: float}) with the per-term values.
    """
    weights = weights or LossWeights()
    scaled = {"completeness": 1.0, "actionness": weights.actionness,
              "start": weights.start, "end": weights.end}
    values = {}
    total = None
    for name, w in scaled.items():
        term = as_tensor(components[name])
        v = float(term.data)
        if not math.isfinite(v):
            raise FloatingPointError(f"loss component {name!r} is not finite ({v})")
        values[name] = v
        if w == 0:
            continue
        contrib = term if w == 1 else term * w
        total = contrib if total is None else total + contrib
    if total is None:
        total = Tensor(0.0)
    values["total"] = float(total.data)
    return total, values
