"""
ELBO objective, the training loop, prediction, and checkpoint files.

Each iteration draws a random context/target partition of the training set,
encodes the context into a prior and the whole training set into a posterior
over the latent variable, decodes every target with one reparameterised latent
draw from the posterior, and takes an Adam step on the negated ELBO.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ContractError, TrainingFailure
from .model import ModelConfig, Modules, NpOdeModel, bind, init_params
from .npmodel import gaussian_log_likelihood, kl_divergence, sample_latent
from .predictive import PredictiveDistribution

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "npode-checkpoint/1"


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 10000
    learning_rate: float = 1e-4
    seed: int = 0
    context_fraction_range: tuple[float, float] = (0.3, 0.9)
    latent_samples_train: int = 1
    latent_samples_predict: int = 1
    kl_per_target: bool = True
    grad_clip: float = 10.0
    trace_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # "constant" or "cosine" (decays to lr_floor * learning_rate at the end)
    lr_schedule: str = "constant"
    lr_floor: float = 0.01

    def __post_init__(self):
        lo, hi = self.context_fraction_range
        if not 0 < lo <= hi < 1:
            raise ConfigError(f"context_fraction_range must satisfy 0 < low <= high < 1, got {lo, hi}")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.latent_samples_train < 1 or self.latent_samples_predict < 1:
            raise ConfigError("latent sample counts must be at least 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")

    def learning_rate_at(self, iteration: int) -> float:
        """Step size for 1-based ``iteration``."""
        if self.lr_schedule == "constant" or self.iterations <= 1:
            return self.learning_rate
        frac = (iteration - 1) / (self.iterations - 1)
        low = self.lr_floor * self.learning_rate
        return low + 0.5 * (self.learning_rate - low) * (1.0 + math.cos(math.pi * frac))

    def to_dict(self):
        d = asdict(self)
        d["context_fraction_range"] = list(self.context_fraction_range)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> TrainConfig:
        d = dict(d)
        if "context_fraction_range" in d:
            d["context_fraction_range"] = tuple(d["context_fraction_range"])
        return cls(**d)


# ---------------------------------------------------------------- objective


def split_context_target(n: int, rng: np.random.Generator, fraction_range=(0.3, 0.9)):
    """Random index partition of ``range(n)`` into (context, target).

    The context size is ``round(u * n)`` for ``u ~ U(range)``, clamped to
    ``[1, n - 1]``.
    """
    if n < 2:
        raise ContractError(f"need at least 2 training rows to split, got {n}")
    lo, hi = fraction_range
    u = rng.uniform(lo, hi) if hi > lo else lo
    k = min(max(int(round(u * n)), 1), n - 1)
    perm = rng.permutation(n)
    return perm[:k], perm[k:]


@dataclass
class ElboTerms:
    loss: dc.Tensor
    kl: float
    nll: float


def elbo_loss(modules: Modules, x_ctx, y_ctx, x_tgt, y_tgt, rng, cfg: TrainConfig) -> ElboTerms:
    """Negated ELBO.

    With ``cfg.kl_per_target`` (default) the loss is
    ``-(mean_t log p(y_t) - KL / T)``; otherwise the summed form
    ``-(sum_t log p(y_t) - KL)``.
    """
    if len(x_ctx) == 0 or len(x_tgt) == 0:
        raise ContractError("context and target sets must be non-empty")
    prior = modules.prior(x_ctx, y_ctx)
    posterior = modules.prior(np.concatenate([x_ctx, x_tgt]), np.concatenate([y_ctx, y_tgt]))
    d_c = modules.attend(x_ctx, y_ctx, x_tgt)

    S = cfg.latent_samples_train
    ll = None
    for _ in range(S):
        z = sample_latent(posterior, rng)
        pred = modules.decode(d_c, z, x_tgt)
        term = gaussian_log_likelihood(y_tgt, pred.mean, pred.std)
        ll = term if ll is None else ll + term
    if S > 1:
        ll = dc.scale(ll, 1.0 / S)
    kl = kl_divergence(posterior, prior)
    T = len(x_tgt)
    if cfg.kl_per_target:
        loss = dc.scale(ll - kl, -1.0 / T)
    else:
        loss = dc.negate(ll - kl)
    return ElboTerms(loss, float(kl.value), float(-ll.value / T))


# ---------------------------------------------------------------- optimiser


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            m = self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * factor
    return norm


def loss_and_grads(model: NpOdeModel, x_ctx, y_ctx, x_tgt, y_tgt, rng, cfg: TrainConfig):
    tape = dc.Tape()
    bound = bind(model.params, tape)
    terms = elbo_loss(model.modules(bound), x_ctx, y_ctx, x_tgt, y_tgt, rng, cfg)
    keys = sorted(bound)
    grads = dict(zip(keys, tape.gradients(terms.loss, [bound[k] for k in keys])))
    return terms, grads


def flat_elbo(model: NpOdeModel, x_ctx, y_ctx, x_tgt, y_tgt, seed: int, cfg: TrainConfig = TrainConfig()):
    """The loss as a function of one flat parameter vector, for gradient checks.

    Returns ``(f, theta0)``; every call of ``f`` redraws the latent noise from a
    fresh generator seeded with ``seed``, so ``f`` is deterministic.
    """
    keys = sorted(model.params)
    shapes = [model.params[k].shape for k in keys]
    sizes = [int(np.prod(sh)) for sh in shapes]
    theta0 = np.concatenate([model.params[k].ravel() for k in keys])

    def f(theta):
        params, start = {}, 0
        for k, sh, n in zip(keys, shapes, sizes):
            params[k] = dc.reshape(theta[start : start + n], sh)
            start += n
        return elbo_loss(model.modules(params), x_ctx, y_ctx, x_tgt, y_tgt, dc.make_rng(seed), cfg).loss

    return f, theta0


# ---------------------------------------------------------------- checkpoint


@dataclass
class ModelCheckpoint:
    model: NpOdeModel
    train_config: TrainConfig
    normalization: dict | None = None
    context_x: np.ndarray | None = None
    context_y: np.ndarray | None = None
    iteration: int = 0
    final_loss: float | None = None

    def to_json(self) -> str:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "model_config": self.model.config.to_dict(),
            "train_config": self.train_config.to_dict(),
            "normalization": self.normalization,
            "iteration": self.iteration,
            "final_loss": self.final_loss,
            "params": {k: encode_array(v) for k, v in sorted(self.model.params.items())},
            "context_x": None if self.context_x is None else encode_array(self.context_x),
            "context_y": None if self.context_y is None else encode_array(self.context_y),
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> ModelCheckpoint:
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"not a checkpoint file (format tag {doc.get('format')!r})")
        model = NpOdeModel(
            ModelConfig.from_dict(doc["model_config"]),
            {k: decode_array(v) for k, v in doc["params"].items()},
        )
        return cls(
            model,
            TrainConfig.from_dict(doc["train_config"]),
            doc["normalization"],
            None if doc["context_x"] is None else decode_array(doc["context_x"]),
            None if doc["context_y"] is None else decode_array(doc["context_y"]),
            doc["iteration"],
            doc["final_loss"],
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> ModelCheckpoint:
        return cls.from_json(Path(path).read_text())

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode()}


def decode_array(d: Mapping) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d.get("dtype", "<f8")).reshape(d["shape"]).astype(np.float64)


# ---------------------------------------------------------------- loops


@dataclass
class TraceRow:
    iteration: int
    loss: float
    kl: float
    nll: float


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    trace: list[TraceRow] = field(default_factory=list)

    def trace_csv(self) -> str:
        lines = ["iteration,loss,kl,nll"]
        lines += [f"{r.iteration},{r.loss!r},{r.kl!r},{r.nll!r}" for r in self.trace]
        return "\n".join(lines) + "\n"


def _streams(seed: int):
    init_seq, train_seq = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.Generator(np.random.PCG64(init_seq)), np.random.Generator(np.random.PCG64(train_seq))


def initial_model(model_cfg: ModelConfig, seed: int) -> NpOdeModel:
    from .model import init_params

    init_rng, _ = _streams(seed)
    return NpOdeModel(model_cfg, init_params(model_cfg, init_rng))


def train(
    model_cfg: ModelConfig,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    normalization: dict | None = None,
    callback: Callable[[int, ElboTerms], None] | None = None,
) -> TrainResult:
    """Run ``cfg.iterations`` Adam steps on the negated ELBO.

    The trace records, every ``cfg.trace_every`` iterations, the mean loss, KL
    and per-target negative log-likelihood over the preceding window.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y):
        raise ContractError("training inputs must be row-aligned matrices")
    init_rng, rng = _streams(cfg.seed)
    model = NpOdeModel(model_cfg, init_params(model_cfg, init_rng))
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    trace: list[TraceRow] = []
    window = np.zeros(3)
    count = 0
    last_loss = None
    for it in range(1, cfg.iterations + 1):
        ci, ti = split_context_target(len(x), rng, cfg.context_fraction_range)
        terms, grads = loss_and_grads(model, x[ci], y[ci], x[ti], y[ti], rng, cfg)
        loss = float(terms.loss.value)
        if not math.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingFailure(it)
        if terms.kl < -1e-9:
            raise AssertionError(f"negative KL {terms.kl} at iteration {it}")
        clip_global_norm(grads, cfg.grad_clip)
        opt.lr = cfg.learning_rate_at(it)
        opt.step(model.params, grads)
        last_loss = loss
        window += (loss, terms.kl, terms.nll)
        count += 1
        if it % cfg.trace_every == 0 or it == cfg.iterations:
            avg = window / count
            trace.append(TraceRow(it, float(avg[0]), float(avg[1]), float(avg[2])))
            window[:] = 0
            count = 0
        if callback is not None:
            callback(it, terms)
    ckpt = ModelCheckpoint(model, cfg, normalization, x.copy(), y.copy(), cfg.iterations, last_loss)
    return TrainResult(ckpt, trace)


def predict(
    model: NpOdeModel | ModelCheckpoint,
    x_ctx,
    y_ctx,
    x_tgt,
    rng: np.random.Generator | None = None,
    samples: int = 1,
    use_prior_mean: bool = False,
) -> PredictiveDistribution:
    """Predictive distribution at ``x_tgt`` given context ``(x_ctx, y_ctx)``.

    ``z`` is drawn from the context-only prior. With several draws the mean is
    the average of the per-draw means and the variance adds the spread of the
    means to the average decoder variance. ``use_prior_mean`` replaces the draw
    by the prior mean.
    """
    if isinstance(model, ModelCheckpoint):
        model = model.model
    x_ctx = np.asarray(x_ctx, dtype=float)
    y_ctx = np.asarray(y_ctx, dtype=float)
    x_tgt = np.atleast_2d(np.asarray(x_tgt, dtype=float))
    if len(x_ctx) == 0:
        raise ContractError("prediction needs a non-empty context")
    if rng is None:
        rng = dc.make_rng(0)
    mods = model.modules()
    prior = mods.prior(x_ctx, y_ctx)
    d_c = mods.attend(x_ctx, y_ctx, x_tgt)
    means, variances = [], []
    for _ in range(1 if use_prior_mean else samples):
        z = prior.mean if use_prior_mean else sample_latent(prior, rng)
        pred = mods.decode(d_c, z, x_tgt).numpy()
        means.append(pred.mean)
        variances.append(pred.std**2)
    means = np.stack(means)
    mean = means.mean(axis=0)
    var = np.mean(variances, axis=0) + means.var(axis=0)
    return PredictiveDistribution(mean, np.sqrt(var))
