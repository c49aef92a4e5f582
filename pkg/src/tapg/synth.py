"""Synthetic feature sequences with planted action instances.

Background snippets come from one Gaussian cluster and action snippets from
another. Some actions get a background-like stretch embedded in their
interior that is still labeled as action, which is exactly the case a
purely local model gets wrong.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import FeatureSequence, GroundTruth
from .tensor import ConfigError


@dataclass
class DatasetSpec:
    num_videos: int = 8
    T: int = 32
    C: int = 32
    instances_per_video: tuple = (1, 2)
    instance_length: tuple = (8, 14)
    noise_prob: float = 0.5
    noise_length: tuple = (3, 5)
    separation: float = 6.0
    noise_std: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.instances_per_video
        lmin, lmax = self.instance_length
        if self.num_videos < 1 or self.T < 4 or self.C < 2 or self.C % 2:
            raise ConfigError(f"bad dataset shape: {self.num_videos} videos, T={self.T}, C={self.C}")
        if not 0 <= lo <= hi:
            raise ConfigError(f"bad instances_per_video range {self.instances_per_video}")
        if not 1 <= lmin <= lmax:
            raise ConfigError(f"bad instance_length range {self.instance_length}")
        # one free snippet on each side of every instance
        if lmax > self.T - 2:
            raise ConfigError(f"instance length up to {lmax} does not fit in T={self.T}")
        if hi * lmin + hi + 1 > self.T:
            raise ConfigError(f"{hi} instances of length >= {lmin} cannot fit in T={self.T}")
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ConfigError(f"noise_prob must be in [0, 1], got {self.noise_prob}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> DatasetSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown dataset spec keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    @classmethod
    def load(cls, path) -> DatasetSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SynthVideo:
    seq: FeatureSequence
    gt: GroundTruth
    noise_segments: list = field(default_factory=list)   # [(start, end)] snippet ranges

    @property
    def action_mask(self) -> np.ndarray:
        m = np.zeros(self.seq.T, dtype=bool)
        for ts, te in self.gt.instances:
            m[int(ts):int(te)] = True
        return m

    @property
    def noise_mask(self) -> np.ndarray:
        m = np.zeros(self.seq.T, dtype=bool)
        for s, e in self.noise_segments:
            m[s:e] = True
        return m


def _cluster_direction(rng: np.random.Generator, C: int) -> np.ndarray:
    # unit vector with equal energy in both channel halves, so both branches see the signal
    u = rng.standard_normal(C)
    h = C // 2
    u[:h] /= np.linalg.norm(u[:h]) * np.sqrt(2)
    u[h:] /= np.linalg.norm(u[h:]) * np.sqrt(2)
    return u


def _place_instances(rng, spec: DatasetSpec, n: int):
    lmin, lmax = spec.instance_length
    for _ in range(100):
        lengths = rng.integers(lmin, lmax + 1, size=n)
        free = spec.T - int(lengths.sum()) - (n + 1)
        if free >= 0:
            break
    else:
        raise ConfigError(f"could not fit {n} instances into T={spec.T}")
    gaps = 1 + rng.multinomial(free, np.full(n + 1, 1.0 / (n + 1)))
    out, t = [], 0
    for k in range(n):
        t += int(gaps[k])
        out.append((t, t + int(lengths[k])))
        t += int(lengths[k])
    return out


def synth_generate(spec: DatasetSpec) -> list[SynthVideo]:
    """Generate ``spec.num_videos`` videos; a pure function of ``spec``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    u = _cluster_direction(rng, spec.C)
    mu_a = 0.5 * spec.separation * u
    mu_b = -0.5 * spec.separation * u
    lo, hi = spec.instances_per_video
    nlo, nhi = spec.noise_length
    videos = []
    for v in range(spec.num_videos):
        n = int(rng.integers(lo, hi + 1))
        instances = _place_instances(rng, spec, n) if n else []
        is_action = np.zeros(spec.T, dtype=bool)
        noise = []
        for ts, te in instances:
            is_action[ts:te] = True
            length = te - ts
            max_noise = min(nhi, length - 2)
            if max_noise >= nlo and rng.random() < spec.noise_prob:
                nl = int(rng.integers(nlo, max_noise + 1))
                ns = int(rng.integers(ts + 1, te - 1 - nl + 1))
                noise.append((ns, ns + nl))
        looks_action = is_action.copy()
        for s, e in noise:
            looks_action[s:e] = False
        centers = np.where(looks_action[:, None], mu_a, mu_b)
        feats = centers + spec.noise_std * rng.standard_normal((spec.T, spec.C))
        vid = f"synth_{v:04d}"
        videos.append(SynthVideo(
            FeatureSequence(vid, feats),
            GroundTruth(vid, [(float(a), float(b)) for a, b in instances], spec.T),
            noise,
        ))
    return videos
