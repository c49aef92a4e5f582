"""Parameter initialisation and the few layer helpers shared by all branches."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, conv1d, layer_norm, parameter


def uniform(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape), name)


def zeros(shape, name: str | None = None) -> Tensor:
    return parameter(np.zeros(shape), name)


def ones(shape, name: str | None = None) -> Tensor:
    return parameter(np.ones(shape), name)


def add_linear(params: dict, name: str, rng, c_in: int, c_out: int) -> None:
    params[f"{name}.w"] = uniform(rng, (c_in, c_out), c_in, f"{name}.w")
    params[f"{name}.b"] = uniform(rng, (c_out,), c_in, f"{name}.b")


def add_conv1d(params: dict, name: str, rng, c_in: int, c_out: int, k: int, groups: int = 1,
               bias: bool = True) -> None:
    fan_in = (c_in // groups) * k
    params[f"{name}.w"] = uniform(rng, (c_out, c_in // groups, k), fan_in, f"{name}.w")
    if bias:
        params[f"{name}.b"] = uniform(rng, (c_out,), fan_in, f"{name}.b")


def add_conv2d(params: dict, name: str, rng, c_in: int, c_out: int, k: int) -> None:
    fan_in = c_in * k * k
    params[f"{name}.w"] = uniform(rng, (c_out, c_in, k, k), fan_in, f"{name}.w")
    params[f"{name}.b"] = uniform(rng, (c_out,), fan_in, f"{name}.b")


def add_norm(params: dict, name: str, width: int) -> None:
    params[f"{name}.gamma"] = ones((width,), f"{name}.gamma")
    params[f"{name}.beta"] = zeros((width,), f"{name}.beta")


def linear(x: Tensor, params: dict, name: str) -> Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def norm(x: Tensor, params: dict, name: str) -> Tensor:
    return layer_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"])


def temporal_conv(x: Tensor, params: dict, name: str, groups: int = 1) -> Tensor:
    """conv1d on a snippet-major (T, C) input; returns (T, C_out)."""
    return conv1d(x.T, params[f"{name}.w"], params.get(f"{name}.b"), groups=groups).T


def tile_channels(x: Tensor, times: int) -> Tensor:
    return concat([x] * times, axis=-1)


def subset(params: dict, prefix: str) -> dict:
    return {k: v for k, v in params.items() if k.startswith(prefix)}
