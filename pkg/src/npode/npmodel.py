"""
Encoder side of the neural-process family.

A deterministic MLP encoder produces per-context representations that a
multi-head cross-attention module aggregates for each target input. A
stochastic MLP encoder is mean-aggregated over its input rows and mapped to a
diagonal Gaussian over the global latent variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ContractError, DimensionError, DomainError
from .predictive import STD_FLOOR

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class EncoderParams:
    """Stacked fully connected layers, ReLU between layers.

    ``head`` is the optional final ``(W, b)`` layer of the stochastic encoder
    that maps the aggregated representation to ``(raw_mean, raw_std)``.
    """

    weights: list
    biases: list
    activation: str = "relu"
    head: tuple | None = None

    @classmethod
    def from_mapping(cls, params: Mapping, prefix: str, n_layers: int, with_head=False):
        weights = [params[f"{prefix}.{i}.W"] for i in range(n_layers)]
        biases = [params[f"{prefix}.{i}.b"] for i in range(n_layers)]
        head = (params[f"{prefix}.out.W"], params[f"{prefix}.out.b"]) if with_head else None
        return cls(weights, biases, head=head)


@dataclass
class AttentionParams:
    num_heads: int
    embed_W: object
    embed_b: object
    Wq: object
    Wk: object
    Wv: object
    Wo: object

    @classmethod
    def from_mapping(cls, params: Mapping, prefix: str, num_heads: int):
        return cls(
            num_heads,
            params[f"{prefix}.embed.W"],
            params[f"{prefix}.embed.b"],
            params[f"{prefix}.Wq"],
            params[f"{prefix}.Wk"],
            params[f"{prefix}.Wv"],
            params[f"{prefix}.Wo"],
        )

    @property
    def width(self) -> int:
        return int(np.shape(self.Wq.value if isinstance(self.Wq, Tensor) else self.Wq)[1])


@dataclass
class LatentDistribution:
    mean: np.ndarray | Tensor
    std: np.ndarray | Tensor

    def numpy(self):
        def v(t):
            return np.array(t.value if isinstance(t, Tensor) else t)

        return LatentDistribution(v(self.mean), v(self.std))


def positive_std(raw) -> Tensor:
    """Map unconstrained outputs to standard deviations ``floor + softplus(raw)``."""
    return dc.add(dc.softplus(raw), STD_FLOOR)


def _activate(h, kind):
    if kind == "relu":
        return dc.relu(h)
    if kind == "tanh":
        return dc.tanh(h)
    if kind in ("linear", None):
        return h
    raise ContractError(f"unknown activation {kind!r}")


def mlp(h, weights, biases, activation="relu"):
    """Dense layers with ``activation`` between consecutive layers."""
    for i, (W, b) in enumerate(zip(weights, biases)):
        if i > 0:
            h = _activate(h, activation)
        h = dc.matmul(h, W) + b
    return h


def _pairs(x, y):
    x = dc.as_tensor(x)
    y = dc.as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"context x {x.shape} and y {y.shape} must be row-aligned matrices")
    if x.shape[0] == 0:
        raise ContractError("context is empty")
    return dc.concat([x, y], axis=1)


def encode_deterministic(params: EncoderParams, x, y) -> Tensor:
    """Per-point representations d_i, shape (n, width)."""
    return mlp(_pairs(x, y), params.weights, params.biases, params.activation)


def encode_stochastic(params: EncoderParams, x, y) -> LatentDistribution:
    """Mean-aggregated stochastic representation mapped to a Gaussian over z."""
    s = mlp(_pairs(x, y), params.weights, params.biases, params.activation)
    s_agg = dc.mean(s, axis=0, keepdims=True)
    W, b = params.head
    raw = dc.matmul(s_agg, W) + b
    latent = raw.shape[1] // 2
    mean = dc.reshape(raw[:, :latent], (latent,))
    std = positive_std(dc.reshape(raw[:, latent:], (latent,)))
    return LatentDistribution(mean, std)


def cross_attention(params: AttentionParams, keys, values, query) -> Tensor:
    """Multi-head scaled dot-product attention of target queries over context.

    Parameters
    ----------
    keys : (n, m) context inputs
    values : (n, width) deterministic representations
    query : (T, m) or (m,) target inputs

    Returns
    -------
    Tensor of shape (T, width), or (width,) for a single 1-D query.
    """
    keys = dc.as_tensor(keys)
    values = dc.as_tensor(values)
    query = dc.as_tensor(query)
    single = query.ndim == 1
    if single:
        query = dc.reshape(query, (1, -1))
    n = keys.shape[0]
    if n < 1:
        raise ContractError("cross_attention needs at least one key")
    if values.shape[0] != n:
        raise ContractError(f"{n} keys but {values.shape[0]} values")

    heads = params.num_heads
    width = params.width
    if width % heads:
        raise DimensionError(f"width {width} not divisible by {heads} heads")
    hd = width // heads

    qe = dc.matmul(query, params.embed_W) + params.embed_b
    ke = dc.matmul(keys, params.embed_W) + params.embed_b

    def split(t, rows):
        return dc.transpose(dc.reshape(t, (rows, heads, hd)), (1, 0, 2))

    T = query.shape[0]
    q = split(dc.matmul(qe, params.Wq), T)
    k = split(dc.matmul(ke, params.Wk), n)
    v = split(dc.matmul(values, params.Wv), n)
    scores = dc.scale(dc.matmul(q, dc.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(hd))
    weights = dc.softmax(scores, axis=-1)
    heads_out = dc.matmul(weights, v)  # (heads, T, hd)
    merged = dc.reshape(dc.transpose(heads_out, (1, 0, 2)), (T, width))
    out = dc.matmul(merged, params.Wo)
    return dc.reshape(out, (width,)) if single else out


def sample_latent(dist: LatentDistribution, rng: np.random.Generator) -> Tensor:
    """Reparameterised draw ``mean + std * eps``; eps is a constant of the tape."""
    eps = rng.standard_normal(np.shape(dist.mean.value if isinstance(dist.mean, Tensor) else dist.mean))
    return dc.add(dist.mean, dc.mul(dist.std, eps))


def _positive(std, what):
    v = std.value if isinstance(std, Tensor) else np.asarray(std)
    if np.any(v <= 0):
        raise DomainError(f"{what} standard deviation must be positive")


def kl_divergence(posterior: LatentDistribution, prior: LatentDistribution) -> Tensor:
    """KL(posterior || prior) between diagonal Gaussians, summed over dimensions."""
    _positive(posterior.std, "posterior")
    _positive(prior.std, "prior")
    var_post = dc.square(posterior.std)
    var_prior = dc.square(prior.std)
    diff = dc.sub(posterior.mean, prior.mean)
    term = (
        dc.log(prior.std)
        - dc.log(posterior.std)
        + dc.div(var_post + dc.square(diff), dc.scale(var_prior, 2.0))
        - 0.5
    )
    return dc.sum(term)


def gaussian_log_likelihood(y, mean, std) -> Tensor:
    """Sum of independent Gaussian log densities over all entries."""
    _positive(std, "likelihood")
    y_shape = np.shape(y.value if isinstance(y, Tensor) else y)
    if y_shape != tuple(dc.as_tensor(mean).shape):
        raise DimensionError(f"y {y_shape} and mean {dc.as_tensor(mean).shape} differ")
    z = dc.div(dc.sub(y, mean), std)
    per = dc.scale(dc.square(z), -0.5) - dc.log(std) - 0.5 * _LOG_2PI
    return dc.sum(per)
