"""Small shared pieces: MLP parameter blocks and forward pass."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Zero-mean uniform with scale 1/sqrt(fan_in)."""
    s = 1.0 / math.sqrt(max(1, fan_in))
    return rng.uniform(-s, s, size=shape)


def init_mlp(params: dict, prefix: str, in_dim: int, hidden: tuple[int, ...],
             out_dim: int, rng: np.random.Generator) -> None:
    """Register weight/bias arrays for an MLP under ``prefix`` in ``params``.

    Layers are named ``<prefix>.l<i>.weight/.bias`` for hidden layers and
    ``<prefix>.out.weight/.bias`` for the final affine map. Weights are stored
    (in_dim, out_dim) so the forward pass is x @ W + b.
    """
    d = in_dim
    for i, width in enumerate(hidden):
        params[f"{prefix}.l{i}.weight"] = uniform_init(rng, (d, width), d)
        params[f"{prefix}.l{i}.bias"] = uniform_init(rng, (width,), d)
        d = width
    params[f"{prefix}.out.weight"] = uniform_init(rng, (d, out_dim), d)
    params[f"{prefix}.out.bias"] = uniform_init(rng, (out_dim,), d)


def mlp_forward(leaves, prefix: str, x: ad.Node, hidden: tuple[int, ...]) -> ad.Node:
    """Hidden layers with relu, then the final affine map (a logit, no squash)."""
    h = x
    for i in range(len(hidden)):
        h = ad.relu(ad.add_bias(ad.matmul(h, leaves[f"{prefix}.l{i}.weight"]),
                                leaves[f"{prefix}.l{i}.bias"]))
    return ad.add_bias(ad.matmul(h, leaves[f"{prefix}.out.weight"]),
                       leaves[f"{prefix}.out.bias"])


def default_hidden(in_dim: int) -> tuple[int, ...]:
    return (max(1, in_dim // 2),)
