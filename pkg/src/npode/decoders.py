"""
Decoders mapping ``w = (d_C, z, x)`` to a predictive Gaussian.

The continuous-depth decoder lifts ``w`` (a one-channel signal) to ``C``
channels with a convolution, integrates a convolutional derivative field with
fixed-step Euler, and reads mean and raw-std off the flattened final state.
The baseline decoder replaces the integration with stacked dense layers.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, DimensionError, UnsupportedConfigError
from .npmodel import mlp, positive_std
from .predictive import PredictiveDistribution


@dataclass(frozen=True)
class OdeSolverConfig:
    d_start: float = 0.0
    d_end: float = 1.0
    step: float = 0.05

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError(f"solver step must be positive, got {self.step}")
        if not self.d_end > self.d_start:
            raise ConfigError("solver d_end must exceed d_start")
        n = (self.d_end - self.d_start) / self.step
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(
                f"(d_end - d_start) / step = {n:g} is not an integer number of steps"
            )

    @property
    def n_steps(self) -> int:
        return int(round((self.d_end - self.d_start) / self.step))


@dataclass
class OdeNetParams:
    lift: object  # (1, C, k)
    conv_a: object  # (C + 1, C, k)
    conv_b: object  # (C + 1, C, k)

    @classmethod
    def from_mapping(cls, params: Mapping, prefix="ode"):
        return cls(params[f"{prefix}.lift"], params[f"{prefix}.conv_a"], params[f"{prefix}.conv_b"])

    @property
    def channels(self) -> int:
        return int(dc.as_tensor(self.conv_a).shape[1])


@dataclass
class OutputHeads:
    mean_W: object
    mean_b: object
    std_W: object
    std_b: object

    @classmethod
    def from_mapping(cls, params: Mapping, prefix="head"):
        return cls(
            params[f"{prefix}.mean.W"],
            params[f"{prefix}.mean.b"],
            params[f"{prefix}.std.W"],
            params[f"{prefix}.std.b"],
        )

    def __call__(self, features) -> PredictiveDistribution:
        mean = dc.matmul(features, self.mean_W) + self.mean_b
        std = positive_std(dc.matmul(features, self.std_W) + self.std_b)
        return PredictiveDistribution(mean, std)


@dataclass
class MlpDecoderParams:
    weights: list
    biases: list

    @classmethod
    def from_mapping(cls, params: Mapping, n_layers=3, prefix="mlp"):
        return cls(
            [params[f"{prefix}.{i}.W"] for i in range(n_layers)],
            [params[f"{prefix}.{i}.b"] for i in range(n_layers)],
        )


def assemble_decoder_input(d_c, z, x_target, slot_width: int | None = None) -> Tensor:
    """Concatenate ``(d_C, z, x)`` with ``x`` zero-padded to ``slot_width``.

    Accepts single vectors or row batches; ``z`` may be a single vector shared
    by every row. The default slot width is the width of ``d_C``.
    """
    d_c = dc.as_tensor(d_c)
    z = dc.as_tensor(z)
    x = dc.as_tensor(x_target)
    single = d_c.ndim == 1
    if single:
        d_c = dc.reshape(d_c, (1, -1))
        x = dc.reshape(x, (1, -1))
    rows = d_c.shape[0]
    if z.ndim == 1:
        z = dc.broadcast_to(dc.reshape(z, (1, -1)), (rows, z.shape[0]))
    slot = d_c.shape[1] if slot_width is None else slot_width
    m = x.shape[1]
    if m > slot:
        raise UnsupportedConfigError(
            f"input dimension {m} exceeds the {slot}-wide input slot; increase the feature width"
        )
    parts = [d_c, z, x]
    if m < slot:
        parts.append(np.zeros((rows, slot - m)))
    w = dc.concat(parts, axis=1)
    return dc.reshape(w, (w.shape[1],)) if single else w


def ode_derivative(params: OdeNetParams, state, depth: float) -> Tensor:
    """Derivative field: [state, D] -> conv_a -> tanh -> [., D] -> conv_b.

    ``state`` is laid out as (..., length, channels); a constant channel filled
    with ``depth`` is appended before each convolution.
    """
    state = dc.as_tensor(state)
    channels = params.channels
    if state.ndim < 2 or state.shape[-1] != channels:
        raise DimensionError(f"state {state.shape} does not have {channels} channels")
    depth_channel = np.full(state.shape[:-1] + (1,), float(depth))
    h = dc.conv1d(dc.concat([state, depth_channel], axis=-1), params.conv_a, channels_last=True)
    h = dc.tanh(h)
    return dc.conv1d(dc.concat([h, depth_channel], axis=-1), params.conv_b, channels_last=True)


def euler_integrate(field: OdeNetParams | Callable, state0, cfg: OdeSolverConfig) -> Tensor:
    """Fixed-step Euler from ``cfg.d_start`` to ``cfg.d_end``.

    ``field`` is either ODE-network parameters or any callable
    ``(state, depth) -> derivative`` built from tape operations.
    """
    deriv = field if callable(field) else (lambda s, d: ode_derivative(field, s, d))
    state = dc.as_tensor(state0)
    depth = cfg.d_start
    for i in range(cfg.n_steps):
        state = state + dc.scale(deriv(state, depth), cfg.step)
        depth = cfg.d_start + (i + 1) * cfg.step
    return state


def lift(params: OdeNetParams, w) -> Tensor:
    """One-channel decoder input (..., length) -> state (..., length, C)."""
    w = dc.as_tensor(w)
    return dc.conv1d(dc.reshape(w, w.shape + (1,)), params.lift, channels_last=True)


def decode_npode(
    params: OdeNetParams, heads: OutputHeads, w, cfg: OdeSolverConfig = OdeSolverConfig()
) -> PredictiveDistribution:
    """Lift, integrate, flatten, then apply the mean and std heads."""
    w = dc.as_tensor(w)
    single = w.ndim == 1
    if single:
        w = dc.reshape(w, (1, -1))
    final = euler_integrate(params, lift(params, w), cfg)
    flat = dc.reshape(final, (final.shape[0], final.shape[1] * final.shape[2]))
    out = heads(flat)
    if single:
        out = PredictiveDistribution(dc.reshape(out.mean, (-1,)), dc.reshape(out.std, (-1,)))
    return out


def decode_mlp(params: MlpDecoderParams, heads: OutputHeads, w) -> PredictiveDistribution:
    """Dense layers with ReLU after each, then the output heads."""
    w = dc.as_tensor(w)
    width = dc.as_tensor(params.weights[0]).shape[0]
    if w.shape[-1] != width:
        raise DimensionError(f"decoder input width {w.shape[-1]} != layer width {width}")
    h = dc.relu(mlp(w, params.weights, params.biases, "relu"))
    return heads(h)


# ---------------------------------------------------------------- parameter counts


@dataclass
class ParameterRow:
    layer: str
    shape: tuple
    count: int


@dataclass
class ParameterReport:
    model: str
    rows: list[ParameterRow] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(r.count for r in self.rows)

    def to_text(self) -> str:
        lines = [f"{self.model} decoder", f"{'layer':<16}{'weight shape':<20}{'# parameters':>14}"]
        for r in self.rows:
            lines.append(f"{r.layer:<16}{str(r.shape):<20}{r.count:>14}")
        lines.append(f"{'total':<36}{self.total:>14}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "shape", "count"])
        for r in self.rows:
            writer.writerow([r.layer, "x".join(str(s) for s in r.shape), r.count])
        writer.writerow(["total", "", self.total])
        return buf.getvalue()


def _fc_row(name, W) -> ParameterRow:
    shape = tuple(int(s) for s in np.shape(dc.as_tensor(W).value))
    return ParameterRow(name, shape, int(np.prod(shape)))


def _conv_row(name, W, stride=1) -> ParameterRow:
    cin, cout, k = (int(s) for s in np.shape(dc.as_tensor(W).value))
    return ParameterRow(name, (cin, cout, k, stride), cin * cout * k)


def count_parameters(decoder) -> ParameterReport:
    """Weight-only counts of the decoder layers; biases and heads are excluded.

    ``decoder`` is an :class:`OdeNetParams`, an :class:`MlpDecoderParams`, or a
    bare list of dense weight matrices.
    """
    if isinstance(decoder, OdeNetParams):
        return ParameterReport(
            "NP-ODE",
            [
                _conv_row("Conv layer 1", decoder.lift),
                _conv_row("Conv layer 2", decoder.conv_a),
                _conv_row("Conv layer 3", decoder.conv_b),
            ],
        )
    weights = decoder.weights if isinstance(decoder, MlpDecoderParams) else list(decoder)
    return ParameterReport("NPs", [_fc_row(f"FC layer {i + 1}", W) for i, W in enumerate(weights)])
