"""Model configuration, parameter initialisation and the shared forward pass."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .decoders import (
    MlpDecoderParams,
    OdeNetParams,
    OdeSolverConfig,
    OutputHeads,
    assemble_decoder_input,
    decode_mlp,
    decode_npode,
)
from .errors import ConfigError
from .npmodel import (
    AttentionParams,
    EncoderParams,
    cross_attention,
    encode_deterministic,
    encode_stochastic,
)
from .predictive import PredictiveDistribution

DECODER_KINDS = ("npode", "mlp")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``feature_width`` is the width of both encoders, of the attention module and
    of the zero-padded input slot in the decoder input; the decoder input
    therefore has length ``2 * feature_width + latent_dim``.
    """

    x_dim: int
    y_dim: int
    decoder_kind: str = "npode"
    feature_width: int = 128
    latent_dim: int = 128
    encoder_layers: int = 3
    num_heads: int = 8
    ode_channels: int = 128
    kernel_size: int = 3
    mlp_layers: int = 3
    solver: OdeSolverConfig = field(default_factory=OdeSolverConfig)

    def __post_init__(self):
        if self.decoder_kind not in DECODER_KINDS:
            raise ConfigError(f"decoder_kind must be one of {DECODER_KINDS}")
        if self.feature_width % self.num_heads:
            raise ConfigError("feature_width must be divisible by num_heads")
        if self.x_dim > self.feature_width:
            raise ConfigError(f"x_dim {self.x_dim} exceeds feature_width {self.feature_width}")
        if min(self.x_dim, self.y_dim, self.encoder_layers, self.mlp_layers) < 1:
            raise ConfigError("dimensions and layer counts must be positive")

    @property
    def decoder_width(self) -> int:
        return 2 * self.feature_width + self.latent_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelConfig:
        d = dict(d)
        solver = d.pop("solver", None)
        if isinstance(solver, Mapping):
            d["solver"] = OdeSolverConfig(**solver)
        elif solver is not None:
            d["solver"] = solver
        return cls(**d)

    def with_(self, **kw) -> ModelConfig:
        return replace(self, **kw)


def _normal(rng, shape, fan_in):
    return rng.standard_normal(shape) / np.sqrt(fan_in)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Weights ~ N(0, 1/fan_in), biases zero. Keys are stable across versions."""
    H, L = cfg.feature_width, cfg.latent_dim
    params: dict[str, np.ndarray] = {}

    def dense(name, n_in, n_out):
        params[f"{name}.W"] = _normal(rng, (n_in, n_out), n_in)
        params[f"{name}.b"] = np.zeros(n_out)

    for enc in ("det", "sto"):
        n_in = cfg.x_dim + cfg.y_dim
        for i in range(cfg.encoder_layers):
            dense(f"{enc}.{i}", n_in, H)
            n_in = H
    dense("sto.out", H, 2 * L)

    dense("att.embed", cfg.x_dim, H)
    for name in ("Wq", "Wk", "Wv", "Wo"):
        params[f"att.{name}"] = _normal(rng, (H, H), H)

    W = cfg.decoder_width
    C, k = cfg.ode_channels, cfg.kernel_size
    if cfg.decoder_kind == "npode":
        params["ode.lift"] = _normal(rng, (1, C, k), k)
        params["ode.conv_a"] = _normal(rng, (C + 1, C, k), (C + 1) * k)
        params["ode.conv_b"] = _normal(rng, (C + 1, C, k), (C + 1) * k)
        head_in = C * W
    else:
        for i in range(cfg.mlp_layers):
            dense(f"mlp.{i}", W, W)
        head_in = W
    dense("head.mean", head_in, cfg.y_dim)
    dense("head.std", head_in, cfg.y_dim)
    return params


def bind(params: Mapping[str, np.ndarray], tape: dc.Tape) -> dict[str, dc.Tensor]:
    """Register every parameter array as a leaf of ``tape`` (sorted key order)."""
    return {k: tape.leaf(params[k]) for k in sorted(params)}


class Modules:
    """Structured views over a flat parameter mapping."""

    def __init__(self, cfg: ModelConfig, params: Mapping):
        self.cfg = cfg
        self.det = EncoderParams.from_mapping(params, "det", cfg.encoder_layers)
        self.sto = EncoderParams.from_mapping(params, "sto", cfg.encoder_layers, with_head=True)
        self.att = AttentionParams.from_mapping(params, "att", cfg.num_heads)
        self.heads = OutputHeads.from_mapping(params, "head")
        if cfg.decoder_kind == "npode":
            self.decoder = OdeNetParams.from_mapping(params, "ode")
        else:
            self.decoder = MlpDecoderParams.from_mapping(params, cfg.mlp_layers, "mlp")

    def prior(self, x_ctx, y_ctx):
        return encode_stochastic(self.sto, x_ctx, y_ctx)

    def attend(self, x_ctx, y_ctx, x_tgt):
        """Target-specific deterministic representations d_C, shape (T, width)."""
        d = encode_deterministic(self.det, x_ctx, y_ctx)
        return cross_attention(self.att, x_ctx, d, x_tgt)

    def decode(self, d_c, z, x_tgt) -> PredictiveDistribution:
        w = assemble_decoder_input(d_c, z, x_tgt, self.cfg.feature_width)
        if self.cfg.decoder_kind == "npode":
            return decode_npode(self.decoder, self.heads, w, self.cfg.solver)
        return decode_mlp(self.decoder, self.heads, w)


@dataclass
class NpOdeModel:
    """Architecture plus current parameter values (plain arrays)."""

    config: ModelConfig
    params: dict[str, np.ndarray]

    @classmethod
    def initialise(cls, config: ModelConfig, seed: int) -> NpOdeModel:
        return cls(config, init_params(config, dc.make_rng(seed)))

    def modules(self, params: Mapping | None = None) -> Modules:
        return Modules(self.config, self.params if params is None else params)

    def copy(self) -> NpOdeModel:
        return NpOdeModel(self.config, {k: v.copy() for k, v in self.params.items()})
