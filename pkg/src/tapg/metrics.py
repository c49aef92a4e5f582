"""Proposal and detection metrics: AR@AN, AUC of the AR-AN curve, and mAP.

Recall is pooled over the dataset (matched ground truths / all ground
truths) per tIoU threshold and then averaged over thresholds. A ground
truth counts as recalled at a threshold when any of the top-AN proposals
of its video reaches that tIoU.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .postproc import Proposal, rank_order

ANET_TIOU = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2).tolist())
THUMOS_TIOU = tuple(np.round(np.arange(0.5, 1.001, 0.05), 2).tolist())
THUMOS_MAP_TIOU = (0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass
class EvalConfig:
    tiou_thresholds: tuple = ANET_TIOU
    an_values: tuple = tuple(range(1, 101))
    map_thresholds: tuple = ANET_TIOU

    def validate(self) -> None:
        for name in ("tiou_thresholds", "map_thresholds"):
            th = np.asarray(getattr(self, name))
            if len(th) == 0 or np.any(th <= 0) or np.any(th > 1) or np.any(np.diff(th) <= 0):
                raise ValueError(f"{name} must be strictly increasing within (0, 1], got {th}")


def _segments(props) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalise a proposal list (Proposal objects or rows of (t_s, t_e, score))."""
    if len(props) == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    if isinstance(props[0], Proposal):
        arr = np.array([(p.t_s, p.t_e, p.p_f) for p in props], dtype=np.float64)
    else:
        arr = np.asarray(props, dtype=np.float64).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def iou_matrix(gt: np.ndarray, s: np.ndarray, e: np.ndarray) -> np.ndarray:
    """(n_gt, n_prop) temporal IoU."""
    gs, ge = gt[:, :1], gt[:, 1:2]
    inter = np.clip(np.minimum(ge, e[None, :]) - np.maximum(gs, s[None, :]), 0.0, None)
    return inter / ((ge - gs) + (e - s)[None, :] - inter)


def recall_curve(proposals: dict, gts: dict, an_values, thresholds) -> np.ndarray:
    """AR (fraction) for every AN in ``an_values``."""
    an_values = np.asarray(list(an_values), dtype=np.int64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    matched = np.zeros((len(an_values), len(thresholds)))
    total = 0
    for vid, inst in gts.items():
        gt = np.asarray(list(inst), dtype=np.float64).reshape(-1, 2)
        if len(gt) == 0:
            continue
        total += len(gt)
        s, e, f = _segments(proposals.get(vid, []))
        if len(s) == 0:
            continue
        order = rank_order(f, s, e)[: int(an_values.max())]
        best = np.maximum.accumulate(iou_matrix(gt, s[order], e[order]), axis=1)  # (n_gt, n)
        cols = np.minimum(an_values, len(order)) - 1
        hits = best[:, cols][:, :, None] >= thresholds[None, None, :]         # (n_gt, n_an, n_th)
        matched += hits.sum(axis=0)
    if total == 0:
        return np.zeros(len(an_values))
    return (matched / total).mean(axis=1)


def ar_at_an(proposals: dict, gts: dict, an: int, thresholds=ANET_TIOU) -> float:
    return float(recall_curve(proposals, gts, [an], thresholds)[0])


def auc(proposals: dict, gts: dict, an_range=range(1, 101), thresholds=ANET_TIOU) -> float:
    """Area under AR vs AN (trapezoid), as a percentage of the full box."""
    an = np.asarray(list(an_range), dtype=np.float64)
    ar = recall_curve(proposals, gts, an.astype(np.int64), thresholds)
    if len(an) == 1:
        return float(100.0 * ar[0])
    return float(100.0 * np.trapezoid(ar, an) / (an[-1] - an[0]))


# detection mAP

def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from a ranked TP indicator vector."""
    if n_gt == 0 or len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    prec = ctp / np.arange(1, len(tp) + 1)
    rec = ctp / n_gt
    mprec = np.concatenate([[0.0], prec, [0.0]])
    mrec = np.concatenate([[0.0], rec, [1.0]])
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def _match_class(dets: list, gts: list, threshold: float) -> np.ndarray:
    """Greedy one-to-one matching of score-ranked detections to ground truth."""
    by_video: dict = {}
    for g in gts:
        by_video.setdefault(g[0], []).append(g[2:4])
    used = {v: np.zeros(len(x), dtype=bool) for v, x in by_video.items()}
    tp = np.zeros(len(dets))
    for i, (vid, _, score, s, e) in enumerate(dets):
        if vid not in by_video:
            continue
        gt = np.asarray(by_video[vid], dtype=np.float64)
        ious = iou_matrix(gt, np.array([s]), np.array([e]))[:, 0]
        for k in np.argsort(-ious, kind="stable"):
            if ious[k] < threshold:
                break
            if not used[vid][k]:
                used[vid][k] = True
                tp[i] = 1.0
                break
    return tp


def map_detection(dets: list, gts: list, thresholds=ANET_TIOU) -> dict:
    """Mean AP over ground-truth classes per tIoU threshold.

    ``dets``: rows (video_id, label, score, t_s, t_e). ``gts``: rows
    (video_id, label, t_s, t_e). Detections with a label absent from the
    ground truth are false positives of a class that is not averaged.
    Returns ``{threshold: mAP}`` (fractions) plus ``"average"``.
    """
    classes = sorted({g[1] for g in gts}, key=str)
    out = {}
    for th in thresholds:
        aps = []
        for c in classes:
            cd = sorted((d for d in dets if d[1] == c), key=lambda d: (-d[2], str(d[0]), d[3], d[4]))
            cg = [g for g in gts if g[1] == c]
            aps.append(interpolated_ap(_match_class(cd, cg, th), len(cg)))
        out[th] = float(np.mean(aps)) if aps else 0.0
    out["average"] = float(np.mean([out[t] for t in thresholds])) if thresholds else 0.0
    return out


# report

REPORT_AN = (1, 5, 10, 50, 100)


@dataclass
class EvalReport:
    ar: dict
    auc: float
    curve: np.ndarray
    an_values: tuple
    map: dict | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {f"AR@{k}": v for k, v in self.ar.items()}
        d["AUC"] = self.auc
        if self.map is not None:
            d["mAP"] = {f"{k:.2f}": 100.0 * v for k, v in self.map.items() if k != "average"}
            d["average_mAP"] = 100.0 * self.map["average"]
        return d

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["AN", "AR"])
            for an, ar in zip(self.an_values, self.curve):
                w.writerow([an, 100.0 * ar])


def evaluate_proposals(proposals: dict, gts: dict, cfg: EvalConfig | None = None,
                       detections: list | None = None, det_gts: list | None = None) -> EvalReport:
    """Percent-scaled report. Videos in ``gts`` without proposals count as
    having none."""
    cfg = cfg or EvalConfig()
    cfg.validate()
    warnings = [f"no proposals for video {v}" for v in gts if v not in proposals]
    an_values = tuple(sorted(set(cfg.an_values) | set(REPORT_AN)))
    curve_all = recall_curve(proposals, gts, an_values, cfg.tiou_thresholds)
    lookup = dict(zip(an_values, curve_all))
    curve = np.array([lookup[a] for a in cfg.an_values])
    an = np.asarray(cfg.an_values, dtype=np.float64)
    area = 100.0 * (np.trapezoid(curve, an) / (an[-1] - an[0]) if len(an) > 1 else curve[0])
    m = None
    if detections is not None:
        m = map_detection(detections, det_gts or [], cfg.map_thresholds)
    return EvalReport({a: 100.0 * float(lookup[a]) for a in REPORT_AN}, float(area), curve,
                      tuple(cfg.an_values), m, warnings)
