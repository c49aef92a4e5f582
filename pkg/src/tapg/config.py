"""Run configuration: one flat set of keys, loadable from ``key = value`` text."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .gcn import VARIANTS
from .heads import FUSION_MODES
from .losses import LossWeights
from .tensor import ConfigError

MODES = ("synthetic", "anet", "thumos")

# per-mode overrides; synthetic keeps the dataclass defaults
MODE_PRESETS = {
    "anet": {"T": 100, "D": 100, "max_proposals": 100, "lr_decay_every": 10},
    "thumos": {"T": 128, "D": 64, "max_proposals": 200, "lr_decay_every": 10},
    "synthetic": {},
}


@dataclass
class RunConfig:
    mode: str = "synthetic"
    # shapes
    T: int = 32
    C: int = 32
    D: int = 16
    num_samples: int = 32
    # global branch
    global_branch: str = "transformer"
    heads: int = 8
    transformer_layers: int = 1
    ffn_expansion: int = 4
    front_block: bool = True
    pos_encoding: bool = True
    act_hidden: int = 0                 # 0 -> global width
    dropout: float = 0.1
    # local branch
    delta: int = 2
    local_variant: str = "adaptive"
    use_learned_adjacency: bool = True
    use_content_adjacency: bool = True
    # output module
    fusion: str = "concat"
    bnd_hidden: int = 32
    cmp_hidden_3d: int = 64
    cmp_hidden_2d: int = 32
    # losses
    lambda_reg: float = 10.0
    lambda_action: float = 1.0
    lambda_start: float = 1.0
    lambda_end: float = 1.0
    cmp_pos_threshold: float = 0.9
    # optimisation
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 100
    epochs: int = 200
    batch_size: int = 1
    seed: int = 0
    precision: str = "f32"
    checkpoint_every: int = 1
    # inference
    window_overlap: float = 0.5
    suppress: str = "soft-nms"
    soft_nms_sigma: float = 0.4
    score_floor: float = 1e-3
    nms_threshold: float = 0.5
    max_proposals: int = 100

    @property
    def width_global(self) -> int:
        return self.C // 2

    @property
    def width_local(self) -> int:
        return self.C - self.C // 2

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_reg, self.lambda_action, self.lambda_start, self.lambda_end)

    def validate(self) -> RunConfig:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)
        need(self.mode in MODES, f"mode must be one of {MODES}, got {self.mode!r}")
        need(self.T >= 4, f"T must be >= 4, got {self.T}")
        need(self.C >= 2 and self.C % 2 == 0, f"C must be even, got {self.C}")
        need(1 <= self.D <= self.T, f"need 1 <= D <= T, got D={self.D}, T={self.T}")
        need(self.num_samples >= 2, f"num_samples must be >= 2, got {self.num_samples}")
        need(self.global_branch in ("transformer", "none"),
             f"global_branch must be 'transformer' or 'none', got {self.global_branch!r}")
        cg = self.width_global
        need(cg % self.heads == 0, f"global width {cg} not divisible by heads={self.heads}")
        need(cg % 2 == 0, f"global width {cg} must be even for positional encoding")
        need(cg % 4 == 0, f"global width {cg} must be divisible by 4 (grouped convs)")
        need((self.act_hidden or cg) % 4 == 0, f"act_hidden must be divisible by 4")
        need(self.bnd_hidden % 4 == 0, f"bnd_hidden must be divisible by 4, got {self.bnd_hidden}")
        need(self.transformer_layers >= 1, "transformer_layers must be >= 1")
        need(0 <= self.delta < self.T, f"need 0 <= delta < T, got delta={self.delta}")
        need(self.local_variant in VARIANTS, f"local_variant must be one of {VARIANTS}")
        need(self.fusion in FUSION_MODES, f"fusion must be one of {FUSION_MODES}")
        need(0.0 <= self.dropout < 1.0, f"dropout must be in [0, 1), got {self.dropout}")
        need(self.precision in ("f32", "f64"), f"precision must be f32 or f64")
        need(self.suppress in ("soft-nms", "nms", "none"), f"unknown suppress {self.suppress!r}")
        need(self.soft_nms_sigma > 0, "soft_nms_sigma must be positive")
        need(0 < self.nms_threshold <= 1, "nms_threshold must be in (0, 1]")
        need(self.batch_size >= 1 and self.epochs >= 0, "batch_size >= 1 and epochs >= 0 required")
        need(self.lr_decay_every >= 1, "lr_decay_every must be >= 1")
        need(0.0 <= self.window_overlap < 1.0, "window_overlap must be in [0, 1)")
        self.loss_weights.validate()
        return self

    def with_mode(self, mode: str) -> RunConfig:
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        return replace(self, mode=mode, **MODE_PRESETS[mode])

    def to_dict(self) -> dict:
        return asdict(self)

    def model_dict(self) -> dict:
        """Keys that determine parameter shapes and the forward computation."""
        keys = ("T", "C", "D", "num_samples", "global_branch", "heads", "transformer_layers",
                "ffn_expansion", "front_block", "pos_encoding", "act_hidden", "delta",
                "local_variant", "use_learned_adjacency", "use_content_adjacency", "fusion",
                "bnd_hidden", "cmp_hidden_3d", "cmp_hidden_2d")
        return {k: getattr(self, k) for k in keys}

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(types)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(k, v, types[k]) for k, v in d.items()})


def _coerce(key, value, typ):
    if not isinstance(value, str):
        return value
    try:
        if typ == "bool":
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {typ}") from None
    return value.strip()


def parse_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value', got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def load_config(path=None, mode: str | None = None, **overrides) -> RunConfig:
    """Mode presets first, then the file, then explicit overrides."""
    file_values = parse_config_text(Path(path).read_text()) if path else {}
    base = RunConfig()
    mode = mode or file_values.get("mode", "synthetic")
    base = base.with_mode(mode.strip() if isinstance(mode, str) else mode)
    d = base.to_dict()
    d.update(RunConfig.from_dict({**d, **file_values}).to_dict())
    d["mode"] = base.mode
    d.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(d).validate()


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
