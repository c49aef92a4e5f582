"""Snippet feature sequences, annotations, and the resampling/windowing helpers."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor import ConfigError


class FormatError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class FeatureSequence:
    video_id: str
    features: np.ndarray            # (T, C), snippet-major
    frame_interval: int = 1
    origin_offset: int = 0

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def C(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        if self.features.ndim != 2:
            raise FormatError(f"{self.video_id}: features must be 2-D, got {self.features.shape}")
        if self.T < 4:
            raise DataError(f"{self.video_id}: need at least 4 snippets, got {self.T}")
        if self.C % 2:
            raise DataError(f"{self.video_id}: channel count must be even, got {self.C}")
        if not np.all(np.isfinite(self.features)):
            raise DataError(f"{self.video_id}: non-finite feature values")


@dataclass
class GroundTruth:
    video_id: str
    instances: list = field(default_factory=list)   # [(t_s, t_e)] in snippet units
    T: int | None = None
    labels: list | None = None                      # optional class label per instance

    def validate(self) -> None:
        for ts, te in self.instances:
            if not ts < te:
                raise DataError(f"{self.video_id}: instance ({ts}, {te}) has t_s >= t_e")
            if ts < 0 or (self.T is not None and te > self.T):
                raise DataError(f"{self.video_id}: instance ({ts}, {te}) outside [0, {self.T}]")


# file I/O

def _meta_path_for(path: Path) -> Path:
    name = path.name
    if name.endswith(".meta.json"):
        return path
    return path.with_name(path.name.split(".")[0] + ".meta.json")


def _read_csv(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    try:
        arr = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: unparsable value ({exc})") from None
    if rows and len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: ragged rows")
    return arr


def load_features(path) -> FeatureSequence:
    """Load a feature sequence from its ``.meta.json`` sidecar or its payload.

    The payload is ``<stem>.csv`` (T rows of C decimals) or ``<stem>.bin``
    (little-endian float32, row-major). A bare CSV without a sidecar is
    accepted; its shape is taken from the file and the id from the stem.
    """
    path = Path(path)
    meta_path = _meta_path_for(path)
    stem = meta_path.name[: -len(".meta.json")]
    meta = None
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
    if path == meta_path:
        candidates = [path.with_name(stem + ".csv"), path.with_name(stem + ".bin")]
        payload = next((c for c in candidates if c.exists()), None)
        if payload is None:
            raise FormatError(f"{path}: no payload ({stem}.csv or {stem}.bin) next to sidecar")
    else:
        payload = path

    if payload.suffix == ".csv":
        feats = _read_csv(payload)
        if meta is not None:
            T, C = int(meta["T"]), int(meta["C"])
            if feats.shape != (T, C):
                raise FormatError(f"{payload}: metadata says T={T}, C={C} but file holds "
                                  f"{feats.shape[0]} rows x {feats.shape[1] if feats.ndim == 2 else 0} cols")
    else:
        if meta is None:
            raise FormatError(f"{payload}: binary payload needs a {stem}.meta.json sidecar")
        T, C = int(meta["T"]), int(meta["C"])
        raw = np.fromfile(payload, dtype="<f4")
        if raw.size != T * C:
            raise FormatError(f"{payload}: metadata says T={T}, C={C} ({T * C} values) "
                              f"but payload holds {raw.size}")
        feats = raw.reshape(T, C).astype(np.float64)

    if not np.all(np.isfinite(feats)):
        raise DataError(f"{payload}: non-finite feature values")
    return FeatureSequence(
        video_id=str(meta["video_id"]) if meta else stem,
        features=feats,
        frame_interval=int(meta.get("frame_interval", 1)) if meta else 1,
        origin_offset=int(meta.get("origin_offset", 0)) if meta else 0,
    )


def save_features(seq: FeatureSequence, directory, fmt: str = "bin") -> Path:
    """Write payload + sidecar into ``directory``; returns the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"video_id": seq.video_id, "T": seq.T, "C": seq.C, "frame_interval": seq.frame_interval}
    if seq.origin_offset:
        meta["origin_offset"] = seq.origin_offset
    if fmt == "csv":
        np.savetxt(directory / f"{seq.video_id}.csv", seq.features, delimiter=",", fmt="%.17g")
    elif fmt == "bin":
        seq.features.astype("<f4").tofile(directory / f"{seq.video_id}.bin")
    else:
        raise ConfigError(f"unknown feature format {fmt!r}")
    meta_path = directory / f"{seq.video_id}.meta.json"
    meta_path.write_text(json.dumps(meta))
    return meta_path


def load_annotations(path) -> dict[str, GroundTruth]:
    entries = json.loads(Path(path).read_text())
    out = {}
    for e in entries:
        inst = [(float(i["start"]), float(i["end"])) for i in e.get("instances", [])]
        labels = [i.get("label") for i in e.get("instances", [])]
        gt = GroundTruth(str(e["video_id"]), inst, e.get("T"),
                         labels if labels and all(lb is not None for lb in labels) else None)
        gt.validate()
        out[gt.video_id] = gt
    return out


def save_annotations(gts, path) -> None:
    entries = []
    for gt in gts:
        inst = []
        for k, (ts, te) in enumerate(gt.instances):
            d = {"start": float(ts), "end": float(te)}
            if gt.labels is not None:
                d["label"] = gt.labels[k]
            inst.append(d)
        entries.append({"video_id": gt.video_id, "T": gt.T, "instances": inst})
    Path(path).write_text(json.dumps(entries, indent=1))


def seconds_to_snippets(t_sec: float, fps: float, frame_interval: int) -> float:
    return t_sec * fps / frame_interval


def snippets_to_seconds(t_snip: float, fps: float, frame_interval: int) -> float:
    return t_snip * frame_interval / fps


# temporal resampling

def resize_linear(seq: FeatureSequence, T_target: int, gt: GroundTruth | None = None):
    """Linearly interpolate every channel onto ``T_target`` points spanning the
    original extent. Ground truth, if given, is scaled by ``T_target / T``."""
    if T_target < 2:
        raise ConfigError(f"resize target must be >= 2, got {T_target}")
    T = seq.T
    if T < 2:
        raise DataError(f"{seq.video_id}: cannot resize a sequence of length {T}")
    if T_target == T:
        feats = seq.features.copy()
    else:
        src = np.arange(T, dtype=np.float64)
        dst = np.linspace(0.0, T - 1, T_target)
        feats = np.stack([np.interp(dst, src, seq.features[:, c]) for c in range(seq.C)], axis=1)
    out = replace(seq, features=feats)
    if gt is None:
        return out
    scale = T_target / T
    new_gt = GroundTruth(gt.video_id, [(ts * scale, te * scale) for ts, te in gt.instances],
                         T_target, gt.labels)
    return out, new_gt


def window_offsets(T: int, window_T: int = 128, overlap: float = 0.5) -> list[int]:
    if window_T < 4:
        raise ConfigError(f"window length must be >= 4, got {window_T}")
    if T <= window_T:
        return [0]
    stride = max(1, int(round(window_T * (1.0 - overlap))))
    offsets = list(range(0, T - window_T + 1, stride))
    if offsets[-1] + window_T < T:
        offsets.append(T - window_T)
    return offsets


def window_video(seq: FeatureSequence, gt: GroundTruth | None = None,
                 window_T: int = 128, overlap: float = 0.5):
    """Cut a long sequence into fixed-length overlapping windows.

    The last window is right-aligned to the tail. Shorter sequences are
    zero-padded at the end to ``window_T``. Returns ``[(window, window_gt)]``
    with instances clipped to the window, shifted to window coordinates and
    dropped when less than one snippet survives the clip.
    """
    out = []
    for off in window_offsets(seq.T, window_T, overlap):
        feats = seq.features[off:off + window_T]
        if feats.shape[0] < window_T:
            feats = np.pad(feats, ((0, window_T - feats.shape[0]), (0, 0)))
        win = FeatureSequence(seq.video_id, feats.copy(), seq.frame_interval,
                              seq.origin_offset + off)
        wgt = None
        if gt is not None:
            inst, labels = [], []
            for k, (ts, te) in enumerate(gt.instances):
                cs, ce = max(ts, off), min(te, off + window_T)
                if ce - cs >= 1:
                    inst.append((cs - off, ce - off))
                    if gt.labels is not None:
                        labels.append(gt.labels[k])
            wgt = GroundTruth(gt.video_id, inst, window_T, labels if gt.labels is not None else None)
        out.append((win, wgt))
    return out


def split_channels(features):
    """First half of the channels feeds the global branch, second half the local one."""
    if isinstance(features, FeatureSequence):
        features = features.features
    C = features.shape[-1]
    if C % 2:
        raise ConfigError(f"cannot split {C} channels into equal halves")
    return features[..., : C // 2], features[..., C // 2:]
