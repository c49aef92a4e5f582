"""Global branch: convolutional front block, one or more self-attention
layers with sine positional encoding on queries/keys, and a snippet-level
actionness predictor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .tensor import (ConfigError, Tensor, as_tensor, avg_pool1d, concat, dropout, relu,
                     sigmoid, softmax_lastdim)


@dataclass
class BranchOutput:
    global_features: Tensor          # (T, C_g)
    actionness: Tensor               # (T,)
    attention_maps: list             # one (H, T, T) array per layer


def init_transformer_params(rng: np.random.Generator, width: int, heads: int = 8, layers: int = 1,
                            ffn_expansion: int = 4, act_hidden: int | None = None,
                            act_groups: int = 4, prefix: str = "tr.") -> dict:
    if width % heads:
        raise ConfigError(f"model width {width} not divisible by {heads} heads")
    if width % act_groups:
        raise ConfigError(f"width {width} not divisible by actionness groups {act_groups}")
    act_hidden = act_hidden or width
    if act_hidden % act_groups:
        raise ConfigError(f"actionness hidden width {act_hidden} not divisible by {act_groups}")
    p: dict = {}
    f = prefix + "front."
    L.add_linear(p, f + "glu_a", rng, width, width)
    L.add_linear(p, f + "glu_b", rng, width, width)
    L.add_norm(p, f + "ln1", width)
    L.add_linear(p, f + "pw1", rng, width, width)
    L.add_norm(p, f + "ln2", width)
    L.add_conv1d(p, f + "dw7", rng, width, width, 7, groups=width)
    L.add_linear(p, f + "pw7", rng, width, width)
    L.add_norm(p, f + "ln3", width)
    hidden = ffn_expansion * width
    for i in range(layers):
        a = f"{prefix}layer{i}.attn."
        for name in ("q", "k", "v", "o"):
            L.add_linear(p, a + name, rng, width, width)
        L.add_norm(p, a + "ln", width)
        m = f"{prefix}layer{i}.ffn."
        L.add_linear(p, m + "fc1", rng, width, hidden)
        L.add_norm(p, m + "ln1", hidden)
        L.add_linear(p, m + "fc2", rng, hidden, width)
        L.add_norm(p, m + "ln2", width)
    h = prefix + "act."
    L.add_conv1d(p, h + "conv1", rng, width, act_hidden, 3, groups=act_groups)
    L.add_conv1d(p, h + "conv2", rng, act_hidden, 1, 1)
    return p


def front_block_forward(x: Tensor, params: dict, prefix: str = "tr.front.") -> Tensor:
    """GLU -> (1x1 conv + 3-tap average pool) -> depthwise-separable 7-tap conv,
    each part as layer_norm(part(x) + x). Shape (T, C) is preserved."""
    x = as_tensor(x)
    glu = L.linear(x, params, prefix + "glu_a") * sigmoid(L.linear(x, params, prefix + "glu_b"))
    x = L.norm(glu + x, params, prefix + "ln1")
    mixed = L.linear(x, params, prefix + "pw1") + avg_pool1d(x.T, 3).T
    x = L.norm(mixed + x, params, prefix + "ln2")
    c = x.shape[1]
    sep = L.linear(L.temporal_conv(x, params, prefix + "dw7", groups=c), params, prefix + "pw7")
    return L.norm(sep + x, params, prefix + "ln3")


def sine_pos_encoding(T: int, width: int) -> np.ndarray:
    if width % 2:
        raise ConfigError(f"positional encoding width must be even, got {width}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, width, 2, dtype=np.float64) / width)
    pe = np.zeros((T, width))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def self_attention(x: Tensor, params: dict, heads: int, prefix: str, pos: np.ndarray | None = None,
                   drop: float = 0.0, rng=None, training: bool = False):
    """Per-head softmax(Q K^T / sqrt(d)) V, heads concatenated (no output
    projection, no residual). Returns ``(mixed, attention)`` with attention
    of shape (H, T, T)."""
    x = as_tensor(x)
    T, C = x.shape
    d = C // heads
    qk_in = x if pos is None else x + Tensor(pos)

    def split(t):
        return t.reshape(T, heads, d).transpose(1, 0, 2)

    q = split(L.linear(qk_in, params, prefix + "q"))
    k = split(L.linear(qk_in, params, prefix + "k"))
    v = split(L.linear(x, params, prefix + "v"))
    attn = softmax_lastdim((q @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(d)))
    mixed = dropout(attn, drop, rng, training) @ v
    return mixed.transpose(1, 0, 2).reshape(T, C), attn


def multi_head_attention(x: Tensor, params: dict, heads: int, prefix: str = "tr.layer0.attn.",
                         pos: np.ndarray | None = None, drop: float = 0.0, rng=None,
                         training: bool = False):
    x = as_tensor(x)
    mixed, attn = self_attention(x, params, heads, prefix, pos, drop, rng, training)
    out = dropout(L.linear(mixed, params, prefix + "o"), drop, rng, training)
    return L.norm(out + x, params, prefix + "ln"), attn


def ffn_forward(x: Tensor, params: dict, prefix: str = "tr.layer0.ffn.", drop: float = 0.0,
                rng=None, training: bool = False) -> Tensor:
    """Two linear layers, each followed by residual + layer norm.

    The widths differ across each layer, so the residual is parameter-free:
    tiled up to the hidden width after fc1, averaged back down after fc2.
    """
    x = as_tensor(x)
    T, C = x.shape
    hidden = params[prefix + "fc1.w"].shape[1]
    times = hidden // C
    h = dropout(relu(L.linear(x, params, prefix + "fc1")), drop, rng, training)
    h = L.norm(h + L.tile_channels(x, times), params, prefix + "ln1")
    y = dropout(L.linear(h, params, prefix + "fc2"), drop, rng, training)
    folded = h.reshape(T, times, C).mean(axis=1)
    return L.norm(y + folded, params, prefix + "ln2")


def actionness_head(features: Tensor, params: dict, prefix: str = "tr.act.", groups: int = 4) -> Tensor:
    """conv1d(k=3, groups=4) + ReLU -> conv1d(k=1) -> sigmoid; one value per snippet."""
    h = relu(L.temporal_conv(as_tensor(features), params, prefix + "conv1", groups=groups))
    return sigmoid(L.temporal_conv(h, params, prefix + "conv2")).reshape(-1)


def transformer_branch_forward(F_g, params: dict, heads: int = 8, layers: int = 1,
                               front_block: bool = True, pos_encoding: bool = True,
                               drop: float = 0.0, rng=None, training: bool = False,
                               prefix: str = "tr.") -> BranchOutput:
    x = as_tensor(F_g)
    if front_block:
        x = front_block_forward(x, params, prefix + "front.")
    T, C = x.shape
    pos = sine_pos_encoding(T, C) if pos_encoding else None
    maps = []
    for i in range(layers):
        x, attn = multi_head_attention(x, params, heads, f"{prefix}layer{i}.attn.", pos,
                                       drop, rng, training)
        x = ffn_forward(x, params, f"{prefix}layer{i}.ffn.", drop, rng, training)
        maps.append(attn.data)
    return BranchOutput(x, actionness_head(x, params, prefix + "act."), maps)
