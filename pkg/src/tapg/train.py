"""Training loop, inference runs and evaluation runs."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore_rng, save_checkpoint
from .config import RunConfig
from .data import DataError, FeatureSequence, GroundTruth, resize_linear, window_video
from .labels import LabelSet
from .metrics import ANET_TIOU, THUMOS_TIOU, EvalConfig, evaluate_proposals
from .model import ProposalModel
from .optim import Adam, NonFiniteGradient
from .postproc import Proposal, enumerate_proposals, shift_proposals, suppress
from .tensor import ConfigError, set_precision

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
LOG_NAME = "train_log.jsonl"


@dataclass
class Sample:
    video_id: str
    features: np.ndarray     # (T, C) at the model's length
    gt: GroundTruth
    labels: LabelSet
    offset: int = 0          # window origin in the source video


def prepare_samples(cfg: RunConfig, videos) -> list[Sample]:
    """Bring (FeatureSequence, GroundTruth) pairs to the model's fixed length.

    anet mode rescales every video to T snippets; thumos mode cuts
    overlapping windows of T snippets (one sample per window); synthetic mode
    requires the length to match already.
    """
    from .labels import assign_labels

    out = []
    for seq, gt in videos:
        if seq.C != cfg.C:
            raise ConfigError(f"{seq.video_id}: features have {seq.C} channels, config expects {cfg.C}")
        if cfg.mode == "anet":
            seq, gt = resize_linear(seq, cfg.T, gt)
            pieces = [(seq, gt, 0)]
        elif cfg.mode == "thumos":
            pieces = [(w, g, w.origin_offset - seq.origin_offset)
                      for w, g in window_video(seq, gt, cfg.T, cfg.window_overlap)]
        else:
            if seq.T != cfg.T:
                raise ConfigError(f"{seq.video_id}: length {seq.T} differs from T={cfg.T}; "
                                  "synthetic mode needs fixed-length input")
            pieces = [(seq, gt, 0)]
        for s, g, off in pieces:
            out.append(Sample(s.video_id, np.asarray(s.features, dtype=np.float64), g,
                              assign_labels(g, cfg.T, cfg.D), off))
    if not out:
        raise DataError("training set is empty")
    return out


@dataclass
class TrainResult:
    model: ProposalModel
    optimizer: Adam
    history: list = field(default_factory=list)
    halted: str | None = None
    checkpoint: Path | None = None

    @property
    def losses(self) -> list[float]:
        return [h["total"] for h in self.history]


def build_model(cfg: RunConfig) -> ProposalModel:
    set_precision(cfg.precision)
    return ProposalModel(cfg)


def model_from_checkpoint(path) -> tuple[ProposalModel, object]:
    ck = load_checkpoint(path)
    model = build_model(ck.config)
    missing = set(model.params) ^ set(ck.params)
    if missing:
        raise ConfigError(f"checkpoint parameters do not match the config: {sorted(missing)[:5]}")
    for k, p in model.params.items():
        if ck.params[k].shape != p.shape:
            raise ConfigError(f"checkpoint tensor {k!r} has shape {ck.params[k].shape}, "
                              f"model expects {p.shape}")
        p.data = ck.params[k].copy()
    return model, ck


def _epoch_order(rng: np.random.Generator, n: int, batch_size: int) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train(cfg: RunConfig, videos, out_dir=None, samples: list[Sample] | None = None,
          resume=None, epochs: int | None = None, log_every: int = 0) -> TrainResult:
    """Adam on the multi-task loss with a seeded per-epoch shuffle.

    ``videos`` is a list of (FeatureSequence, GroundTruth) pairs (ignored when
    ``samples`` is given). A checkpoint is written to ``out_dir`` every
    ``checkpoint_every`` epochs; a non-finite loss or gradient stops training
    and leaves the last good checkpoint in place.
    """
    cfg.validate()
    samples = samples if samples is not None else prepare_samples(cfg, videos)
    epochs = cfg.epochs if epochs is None else epochs
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    start_epoch = 0
    history: list = []
    if resume is not None:
        model, ck = model_from_checkpoint(resume)
        if ck.config.model_dict() != cfg.model_dict():
            raise ConfigError("resume checkpoint was trained with a different model config")
        opt = Adam(model.params, cfg.lr, cfg.lr_decay, cfg.lr_decay_every)
        if ck.optim is not None:
            opt.state = ck.optim
        rng = restore_rng(ck.rng_state, cfg.seed)
        start_epoch, history = ck.epoch, list(ck.history)
    else:
        model = build_model(cfg)
        opt = Adam(model.params, cfg.lr, cfg.lr_decay, cfg.lr_decay_every)
        rng = np.random.default_rng([cfg.seed, 1])

    result = TrainResult(model, opt, history)
    ckpt_path = out_dir / CHECKPOINT_NAME if out_dir is not None else None
    for epoch in range(start_epoch, start_epoch + epochs):
        t0 = time.perf_counter()
        opt.set_epoch(epoch)
        sums: dict = {}
        try:
            for batch in _epoch_order(rng, len(samples), cfg.batch_size):
                opt.zero_grad()
                total = None
                for i in batch:
                    s = samples[i]
                    out = model.forward(s.features, training=True, rng=rng)
                    loss, values = model.loss(out, s.labels)
                    for k, v in values.items():
                        sums[k] = sums.get(k, 0.0) + v
                    total = loss if total is None else total + loss
                total = total * (1.0 / len(batch))
                total.backward()
                opt.step()
        except (FloatingPointError, NonFiniteGradient) as exc:
            result.halted = f"epoch {epoch + 1}: {exc}"
            logger.error("training halted at %s; last good checkpoint kept", result.halted)
            break
        rec = {k: v / len(samples) for k, v in sums.items()}
        rec.update(epoch=epoch + 1, lr=opt.lr, seconds=time.perf_counter() - t0)
        history.append(rec)
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d  total %.4f  com %.4f  act %.4f  start %.4f  end %.4f  (%.2fs)",
                        rec["epoch"], rec["total"], rec["completeness"], rec["actionness"],
                        rec["start"], rec["end"], rec["seconds"])
        if out_dir is not None:
            with open(out_dir / LOG_NAME, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
            if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == start_epoch + epochs:
                save_checkpoint(ckpt_path, model.params, cfg, opt.state, epoch + 1, rng, history)
                result.checkpoint = ckpt_path
    return result


# inference

def _video_proposals(model: ProposalModel, seq: FeatureSequence, cfg: RunConfig) -> list[Proposal]:
    kw = dict(method=cfg.suppress, max_out=cfg.max_proposals, sigma=cfg.soft_nms_sigma,
              score_floor=cfg.score_floor, iou_threshold=cfg.nms_threshold)
    vid = seq.video_id
    if cfg.mode == "anet":
        scaled = resize_linear(seq, cfg.T)
        props = enumerate_proposals(model.predict(scaled.features), vid)
        return suppress(shift_proposals(props, 0.0, seq.T / cfg.T), **kw)
    if cfg.mode == "thumos":
        pooled = []
        for win, _ in window_video(seq, None, cfg.T, cfg.window_overlap):
            off = win.origin_offset - seq.origin_offset
            props = enumerate_proposals(model.predict(win.features), vid)
            props = shift_proposals(props, float(off))
            props = [p for p in props if p.t_s < seq.T]
            props = [p if p.t_e <= seq.T else Proposal(p.t_s, float(seq.T), p.p_s, p.p_e, p.p_cc,
                                                       p.p_cr, p.p_f, vid) for p in props]
            pooled.extend(suppress(props, **kw))
        return suppress(pooled, **kw)
    if seq.T != cfg.T:
        raise ConfigError(f"{vid}: length {seq.T} differs from the model's T={cfg.T}; the "
                          "learned adjacency fixes the input length")
    return suppress(enumerate_proposals(model.predict(seq.features), vid), **kw)


def infer(model: ProposalModel, sequences, cfg: RunConfig | None = None) -> dict[str, list[Proposal]]:
    """Proposals per video id, in the source video's snippet coordinates."""
    cfg = cfg or model.cfg
    set_precision(cfg.precision)
    out = {}
    for seq in sequences:
        if seq.C != cfg.C:
            raise ConfigError(f"{seq.video_id}: features have {seq.C} channels, model expects {cfg.C}")
        out[seq.video_id] = _video_proposals(model, seq, cfg)
    return out


def eval_config_for(mode: str) -> EvalConfig:
    if mode == "thumos":
        return EvalConfig(THUMOS_TIOU, tuple(range(1, 101)), ANET_TIOU)
    return EvalConfig()


def evaluate(proposals: dict, gts: dict, mode: str = "synthetic", detections=None, det_gts=None):
    """``gts`` maps video id to GroundTruth (or a list of (t_s, t_e))."""
    gt_lists = {k: (v.instances if isinstance(v, GroundTruth) else list(v)) for k, v in gts.items()}
    report = evaluate_proposals(proposals, gt_lists, eval_config_for(mode), detections, det_gts)
    for w in report.warnings:
        logger.warning(w)
    return report


def top1_tious(proposals: dict, gts: dict) -> dict[str, float]:
    """Best tIoU between each video's top-ranked proposal and any of its ground truths."""
    from .postproc import sort_proposals, tiou

    out = {}
    for vid, gt in gts.items():
        inst = gt.instances if isinstance(gt, GroundTruth) else gt
        props = sort_proposals(proposals.get(vid, []))
        if not props or not inst:
            out[vid] = 0.0
            continue
        top = props[0]
        out[vid] = max(tiou((top.t_s, top.t_e), g) for g in inst)
    return out


def mean_loss_curve(history: list, window: int = 20) -> np.ndarray:
    losses = np.array([h["total"] for h in history])
    if len(losses) < window:
        return losses
    return np.convolve(losses, np.ones(window) / window, mode="valid")


def is_finite_history(history: list) -> bool:
    return all(math.isfinite(h["total"]) for h in history)

