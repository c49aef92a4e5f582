"""From score maps to a ranked, de-duplicated proposal list."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .heads import ScoreMaps
from .tensor import ConfigError


@dataclass
class Proposal:
    t_s: float
    t_e: float
    p_s: float
    p_e: float
    p_cc: float
    p_cr: float
    p_f: float
    video_id: str = ""

    @property
    def score(self) -> float:
        return self.p_f


def fuse_scores(p_s, p_e, p_cc, p_cr):
    return p_s * p_e * p_cc * p_cr


def enumerate_proposals(maps: ScoreMaps, video_id: str = "") -> list[Proposal]:
    """One proposal per valid map cell, scored by the four-way product."""
    T = maps.T
    out = []
    d_idx, j_idx = np.nonzero(maps.valid_mask)
    for d, j in zip(d_idx.tolist(), j_idx.tolist()):
        e = min(j + d + 1, T - 1)
        ps, pe = float(maps.start[j]), float(maps.end[e])
        pcc, pcr = float(maps.cc_map[d, j]), float(maps.cr_map[d, j])
        out.append(Proposal(float(j), float(j + d + 1), ps, pe, pcc, pcr,
                            fuse_scores(ps, pe, pcc, pcr), video_id))
    return out


def tiou(a, b) -> float:
    """Temporal IoU of two (start, end) intervals."""
    if not (a[0] < a[1] and b[0] < b[1]):
        raise ValueError(f"degenerate interval in tiou({a}, {b})")
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    return inter / ((a[1] - a[0]) + (b[1] - b[0]) - inter)


def tiou_many(seg, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    inter = np.clip(np.minimum(ends, seg[1]) - np.maximum(starts, seg[0]), 0.0, None)
    return inter / ((ends - starts) + (seg[1] - seg[0]) - inter)


def rank_order(scores, starts, ends) -> np.ndarray:
    """Indices sorted by score desc, then start asc, then end asc."""
    return np.lexsort((np.asarray(ends), np.asarray(starts), -np.asarray(scores)))


def sort_proposals(props: list[Proposal]) -> list[Proposal]:
    return sorted(props, key=lambda p: (-p.p_f, p.t_s, p.t_e))


def _arrays(props):
    s = np.array([p.t_s for p in props], dtype=np.float64)
    e = np.array([p.t_e for p in props], dtype=np.float64)
    f = np.array([p.p_f for p in props], dtype=np.float64)
    return s, e, f


def soft_nms(props: list[Proposal], sigma: float = 0.4, score_floor: float = 1e-3,
             max_out: int = 100) -> list[Proposal]:
    """Gaussian Soft-NMS. Repeatedly keeps the best remaining proposal and
    decays every other remaining score by exp(-tIoU^2 / sigma)."""
    if sigma <= 0:
        raise ConfigError(f"soft_nms sigma must be positive, got {sigma}")
    if not props:
        return []
    s, e, f = _arrays(props)
    f = f.copy()
    alive = np.ones(len(props), dtype=bool)
    kept = []
    while alive.any() and len(kept) < max_out:
        idx = np.flatnonzero(alive)
        best = idx[rank_order(f[idx], s[idx], e[idx])[0]]
        if f[best] < score_floor:
            break
        kept.append((best, f[best]))
        alive[best] = False
        rest = np.flatnonzero(alive)
        if len(rest):
            iou = tiou_many((s[best], e[best]), s[rest], e[rest])
            f[rest] = f[rest] * np.exp(-(iou * iou) / sigma)
    out = [replace(props[i], p_f=float(score)) for i, score in kept]
    return sort_proposals(out)


def nms(props: list[Proposal], iou_threshold: float = 0.5, max_out: int = 100) -> list[Proposal]:
    """Greedy hard NMS: drop anything overlapping a kept proposal by more than
    ``iou_threshold``."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ConfigError(f"nms threshold must be in (0, 1], got {iou_threshold}")
    if not props:
        return []
    s, e, f = _arrays(props)
    order = rank_order(f, s, e)
    kept = []
    for i in order:
        if len(kept) >= max_out:
            break
        if kept:
            k = np.array(kept)
            if (tiou_many((s[i], e[i]), s[k], e[k]) > iou_threshold).any():
                continue
        kept.append(int(i))
    return [props[i] for i in kept]


def suppress(props: list[Proposal], method: str = "soft-nms", max_out: int = 100,
             sigma: float = 0.4, score_floor: float = 1e-3,
             iou_threshold: float = 0.5) -> list[Proposal]:
    if method == "soft-nms":
        return soft_nms(props, sigma, score_floor, max_out)
    if method == "nms":
        return nms(props, iou_threshold, max_out)
    if method == "none":
        return sort_proposals(props)
    raise ConfigError(f"unknown suppression method {method!r}")


def shift_proposals(props: list[Proposal], offset: float = 0.0, scale: float = 1.0):
    return [replace(p, t_s=(p.t_s + offset) * scale, t_e=(p.t_e + offset) * scale) for p in props]


# proposal files (JSON lines)

def write_proposals(path, props: list[Proposal], seconds: bool = False, fps: float = 30.0,
                    frame_interval: dict | None = None) -> None:
    with open(path, "w") as fh:
        for p in props:
            scale = 1.0
            if seconds:
                scale = (frame_interval or {}).get(p.video_id, 1) / fps
            fh.write(json.dumps({
                "video_id": p.video_id, "t_start": p.t_s * scale, "t_end": p.t_e * scale,
                "score": p.p_f, "p_s": p.p_s, "p_e": p.p_e, "p_cc": p.p_cc, "p_cr": p.p_cr,
            }) + "\n")


def read_proposals(path) -> dict[str, list[Proposal]]:
    out: dict[str, list[Proposal]] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        p = Proposal(d["t_start"], d["t_end"], d.get("p_s", 1.0), d.get("p_e", 1.0),
                     d.get("p_cc", 1.0), d.get("p_cr", 1.0), d["score"], d["video_id"])
        out.setdefault(p.video_id, []).append(p)
    return out


def proposal_dict(p: Proposal) -> dict:
    return asdict(p)
