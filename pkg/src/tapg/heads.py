"""Output module: global/local fusion, boundary probabilities and the
boundary-matching completeness maps.

Maps are duration-major: cell (d, j) with d = 0..D-1 holds the proposal
that starts at snippet j and lasts d + 1 snippets, i.e. [j, j + d + 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import layers as L
from .tensor import (ConfigError, Tensor, as_tensor, concat, conv2d, relu, sigmoid,
                     sparse_matmul)

FUSION_MODES = ("concat", "sum", "late")


@dataclass
class ScoreMaps:
    start: np.ndarray        # (T,)
    end: np.ndarray          # (T,)
    actionness: np.ndarray   # (T,)
    cc_map: np.ndarray       # (D, T)
    cr_map: np.ndarray       # (D, T)
    valid_mask: np.ndarray   # (D, T) bool

    @property
    def T(self) -> int:
        return len(self.start)

    @property
    def D(self) -> int:
        return self.cc_map.shape[0]


def valid_mask(D: int, T: int) -> np.ndarray:
    """True where the proposal [j, j + d + 1] ends on a snippet index < T."""
    d = np.arange(1, D + 1)[:, None]
    j = np.arange(T)[None, :]
    return (j + d) <= T - 1


def fuse_global_local(global_feats, local_feats, mode: str = "concat"):
    g, l = as_tensor(global_feats), as_tensor(local_feats)
    if g.shape[0] != l.shape[0]:
        raise ConfigError(f"branch lengths differ: {g.shape[0]} vs {l.shape[0]}")
    if mode == "concat":
        return concat([g, l], axis=1)
    if mode == "sum":
        if g.shape[1] != l.shape[1]:
            raise ConfigError(f"sum fusion needs equal widths, got {g.shape[1]} and {l.shape[1]}")
        return g + l
    if mode == "late":
        return g, l
    raise ConfigError(f"unknown fusion mode {mode!r}, expected one of {FUSION_MODES}")


# boundary head

def init_boundary_params(rng, c_in, hidden: int, groups: int = 4, late: bool = False,
                         prefix: str = "bnd.") -> dict:
    p: dict = {}
    if late:
        for side, c in zip("gl", c_in):
            _check_groups(c, hidden, groups)
            L.add_conv1d(p, f"{prefix}{side}.conv1", rng, c, hidden, 3, groups=groups)
        L.add_conv1d(p, prefix + "conv2", rng, 2 * hidden, 2, 1)
    else:
        _check_groups(c_in, hidden, groups)
        L.add_conv1d(p, prefix + "conv1", rng, c_in, hidden, 3, groups=groups)
        L.add_conv1d(p, prefix + "conv2", rng, hidden, 2, 1)
    return p


def _check_groups(c_in: int, hidden: int, groups: int) -> None:
    if c_in % groups or hidden % groups:
        raise ConfigError(f"boundary head: channels {c_in} -> {hidden} not divisible by groups={groups}")


def boundary_head(fused, params: dict, prefix: str = "bnd.", groups: int = 4):
    """conv1d(k=3, groups=4) + ReLU -> conv1d(k=1, 2 channels) -> sigmoid.
    ``fused`` may be a (global, local) pair for late fusion."""
    if isinstance(fused, tuple):
        h = concat([relu(L.temporal_conv(f, params, f"{prefix}{s}.conv1", groups=groups))
                    for s, f in zip("gl", fused)], axis=1)
    else:
        h = relu(L.temporal_conv(as_tensor(fused), params, prefix + "conv1", groups=groups))
    out = sigmoid(L.temporal_conv(h, params, prefix + "conv2"))     # (T, 2)
    return out[:, 0], out[:, 1]


# boundary-matching sampling

@lru_cache(maxsize=16)
def bm_sampling_matrix(T: int, D: int, N: int) -> sp.csr_matrix:
    """(T, N*D*T) weights; column (k*D + d)*T + j linearly interpolates sample
    point k of the proposal at cell (d, j). Invalid cells have empty columns."""
    if D > T:
        raise ConfigError(f"max duration D={D} exceeds T={T}")
    if N < 2:
        raise ConfigError(f"need at least 2 sample points, got {N}")
    d_idx, j_idx = np.nonzero(valid_mask(D, T))
    dur = (d_idx + 1).astype(np.float64)
    k = np.arange(N, dtype=np.float64)
    pos = j_idx[None, :] + k[:, None] * dur[None, :] / (N - 1)            # (N, cells)
    lo = np.minimum(np.floor(pos).astype(np.int64), T - 1)
    frac = pos - lo
    hi = np.minimum(lo + 1, T - 1)
    cols = (np.arange(N)[:, None] * D + d_idx[None, :]) * T + j_idx[None, :]
    rows = np.concatenate([lo.ravel(), hi.ravel()])
    data = np.concatenate([(1.0 - frac).ravel(), frac.ravel()])
    cc = np.concatenate([cols.ravel(), cols.ravel()])
    keep = data != 0.0
    m = sp.coo_matrix((data[keep], (rows[keep], cc[keep])), shape=(T, N * D * T))
    return m.tocsr()


def bm_sample(fused, D: int, N: int = 32) -> Tensor:
    """Sample N features uniformly over every valid proposal; (C, N, D, T)."""
    x = as_tensor(fused)
    T, C = x.shape
    s = bm_sampling_matrix(T, D, N)
    return sparse_matmul(x.T, s).reshape(C, N, D, T)


# completeness head

def _add_cmp_trunk(p, prefix, rng, c_in, N, h3, h2):
    fan = c_in * N
    p[prefix + "conv3d.w"] = L.uniform(rng, (h3, fan), fan, prefix + "conv3d.w")
    p[prefix + "conv3d.b"] = L.uniform(rng, (h3,), fan, prefix + "conv3d.b")
    L.add_conv2d(p, prefix + "c1", rng, h3, h2, 1)
    L.add_conv2d(p, prefix + "c2", rng, h2, h2, 3)
    L.add_conv2d(p, prefix + "c3", rng, h2, h2, 3)


def init_completeness_params(rng, c_in, N: int, hidden_3d: int, hidden_2d: int,
                             late: bool = False, prefix: str = "cmp.") -> dict:
    p: dict = {}
    if late:
        for side, c in zip("gl", c_in):
            _add_cmp_trunk(p, f"{prefix}{side}.", rng, c, N, hidden_3d, hidden_2d)
        L.add_conv2d(p, prefix + "out", rng, 2 * hidden_2d, 2, 1)
    else:
        _add_cmp_trunk(p, prefix, rng, c_in, N, hidden_3d, hidden_2d)
        L.add_conv2d(p, prefix + "out", rng, hidden_2d, 2, 1)
    return p


def _cmp_trunk(sampled: Tensor, params: dict, prefix: str) -> Tensor:
    C, N, D, T = sampled.shape
    w3 = params[prefix + "conv3d.w"]
    if w3.shape[1] != C * N:
        raise ConfigError(f"completeness head expects {w3.shape[1]} = C*N inputs, got C={C}, N={N}")
    # a (N,1,1) conv3d with stride N is a dense map over (channel, sample) pairs
    h = relu(w3 @ sampled.reshape(C * N, D * T) + params[prefix + "conv3d.b"].reshape(-1, 1))
    h = h.reshape(-1, D, T)
    h = relu(conv2d(h, params[prefix + "c1.w"], params[prefix + "c1.b"]))
    h = relu(conv2d(h, params[prefix + "c2.w"], params[prefix + "c2.b"]))
    return relu(conv2d(h, params[prefix + "c3.w"], params[prefix + "c3.b"]))


def completeness_head(sampled, params: dict, mask: np.ndarray, prefix: str = "cmp."):
    """Returns (M_cc, M_cr), each (D, T), zero on invalid cells.
    ``sampled`` may be a (global, local) pair for late fusion."""
    if isinstance(sampled, tuple):
        h = concat([_cmp_trunk(as_tensor(s), params, f"{prefix}{side}.")
                    for side, s in zip("gl", sampled)], axis=0)
    else:
        h = _cmp_trunk(as_tensor(sampled), params, prefix)
    out = sigmoid(conv2d(h, params[prefix + "out.w"], params[prefix + "out.b"]))
    out = out * Tensor(mask.astype(np.float64))
    return out[0], out[1]
