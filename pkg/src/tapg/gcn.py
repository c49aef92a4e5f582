"""Local branch: graph convolution over a banded snippet graph whose
adjacency is a learned position-specific matrix plus a content term built
from pairwise feature differences. Also hosts the alternative local
structures used for ablation."""

from __future__ import annotations

import numpy as np

from . import layers as L
from .tensor import ConfigError, Tensor, as_tensor, parameter, relu, softmax_lastdim, tabs

VARIANTS = ("adaptive", "general-gcn", "self-attn-gcn", "conv")


def build_mask(T: int, delta: int) -> np.ndarray:
    """Band matrix with ones where |m - n| <= delta (self-loops included)."""
    if not 0 <= delta < T:
        raise ConfigError(f"connection distance must satisfy 0 <= delta < T, got delta={delta}, T={T}")
    idx = np.arange(T)
    return (np.abs(idx[:, None] - idx[None, :]) <= delta).astype(np.float64)


def init_gcn_params(rng: np.random.Generator, T: int, c_in: int, c_out: int | None = None,
                    delta: int = 2, variant: str = "adaptive", prefix: str = "gcn.") -> dict:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown local variant {variant!r}, expected one of {VARIANTS}")
    c_out = c_out or c_in
    p: dict = {}
    if variant == "adaptive":
        band = build_mask(T, delta)
        a = band * (1.0 / (2 * delta + 1) + rng.uniform(-0.01, 0.01, size=(T, T)))
        p[prefix + "A_a"] = parameter(a, prefix + "A_a")
        p[prefix + "theta"] = L.uniform(rng, (c_in,), c_in, prefix + "theta")
        p[prefix + "W"] = L.uniform(rng, (c_out, c_in), c_in, prefix + "W")
    elif variant in ("general-gcn", "self-attn-gcn"):
        p[prefix + "W"] = L.uniform(rng, (c_out, c_in), c_in, prefix + "W")
        if variant == "self-attn-gcn":
            p[prefix + "W_theta"] = L.uniform(rng, (c_in, c_in), c_in, prefix + "W_theta")
            p[prefix + "W_phi"] = L.uniform(rng, (c_in, c_in), c_in, prefix + "W_phi")
    else:
        L.add_conv1d(p, prefix + "conv", rng, c_in, c_out, 2 * delta + 1, bias=False)
    if c_out != c_in:
        p[prefix + "res"] = L.uniform(rng, (c_out, c_in), c_in, prefix + "res")
    return p


def content_adjacency(F_l, theta, M: np.ndarray) -> Tensor:
    """Row-wise softmax of relu(theta . |f_m - f_n|) restricted to the band."""
    F_l, theta = as_tensor(F_l), as_tensor(theta)
    T, C = F_l.shape
    diff = tabs(F_l.reshape(T, 1, C) - F_l.reshape(1, T, C))
    logits = relu((diff @ theta.reshape(C, 1)).reshape(T, T))
    return softmax_lastdim(logits, mask=np.asarray(M) > 0)


def _aggregate(F_l: Tensor, adj, params: dict, prefix: str) -> Tensor:
    # channel transform first, then neighbourhood aggregation along adjacency rows
    h = F_l @ params[prefix + "W"].T
    return relu(adj @ h) + _residual(F_l, params, prefix)


def _residual(F_l: Tensor, params: dict, prefix: str) -> Tensor:
    res = params.get(prefix + "res")
    return F_l if res is None else F_l @ res.T


def adaptive_gcn_forward(F_l, params: dict, M: np.ndarray, prefix: str = "gcn.",
                         use_learned: bool = True, use_content: bool = True):
    """relu(((A_a + A_d) * M) . F_l . W^T) + residual, in snippet-major layout.

    Output row t aggregates the band neighbours of snippet t using row t of
    the adjacency. Returns ``(features, adjacency, A_d)``.
    """
    F_l = as_tensor(F_l)
    A_d = content_adjacency(F_l, params[prefix + "theta"], M)
    adj = 0.0
    if use_learned:
        adj = adj + params[prefix + "A_a"]
    if use_content:
        adj = adj + A_d
    adj = adj * Tensor(M)
    return _aggregate(F_l, adj, params, prefix), adj, A_d


def general_adjacency(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    return M / M.sum(axis=1, keepdims=True)


def self_attention_adjacency(F_l, params: dict, M: np.ndarray, prefix: str = "gcn.") -> Tensor:
    F_l = as_tensor(F_l)
    a = F_l @ params[prefix + "W_theta"].T
    b = F_l @ params[prefix + "W_phi"].T
    return softmax_lastdim(a @ b.T, mask=np.asarray(M) > 0)


def local_variant_forward(F_l, variant: str, params: dict, M: np.ndarray,
                          prefix: str = "gcn.") -> Tensor:
    F_l = as_tensor(F_l)
    if variant == "adaptive":
        return adaptive_gcn_forward(F_l, params, M, prefix)[0]
    if variant == "general-gcn":
        return _aggregate(F_l, Tensor(general_adjacency(M)), params, prefix)
    if variant == "self-attn-gcn":
        return _aggregate(F_l, self_attention_adjacency(F_l, params, M, prefix), params, prefix)
    if variant == "conv":
        return relu(L.temporal_conv(F_l, params, prefix + "conv")) + _residual(F_l, params, prefix)
    raise ConfigError(f"unknown local variant {variant!r}, expected one of {VARIANTS}")
