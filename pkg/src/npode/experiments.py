"""
End-to-end study protocols shared by the command line and the acceptance suite.

The spiral study trains on 150 of 200 noisy spiral points and reports RMSE on
the other 50 in physical units. The tabular study fixes a 20-row test set and
grows the training set through nested subsets, reporting MAPE per size.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field


from . import diffcore as dc
from .baselines import gp_fit_columns, gp_predict_columns
from .data import (
    Dataset,
    SpiralConfig,
    SplitSpec,
    generate_spiral,
    generate_synthetic6,
    normalize,
    split_train_test,
)
from .metrics import EvalReport, evaluate
from .model import ModelConfig
from .predictive import PredictiveDistribution
from .training import ModelCheckpoint, TrainConfig, predict, train

MODEL_KINDS = ("npode", "np", "gp-matern", "gp-poly")
NEURAL_KINDS = {"npode": "npode", "np": "mlp"}
GP_KERNELS = {"gp-matern": "matern52", "gp-poly": "polynomial"}

# Width used for the desk-scale studies; the architecture defaults stay at 128.
DESK_WIDTHS = dict(feature_width=32, latent_dim=32, num_heads=4, ode_channels=16)


@dataclass(frozen=True)
class StudySettings:
    iterations: int = 10000
    learning_rate: float = 3e-3
    lr_schedule: str = "cosine"
    predict_samples: int = 20
    widths: dict = field(default_factory=lambda: dict(DESK_WIDTHS))

    def model_config(self, kind: str, x_dim: int, y_dim: int) -> ModelConfig:
        return ModelConfig(x_dim, y_dim, decoder_kind=NEURAL_KINDS[kind], **self.widths)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, learning_rate=self.learning_rate, seed=seed,
                           lr_schedule=self.lr_schedule, latent_samples_predict=self.predict_samples)


@dataclass
class FitResult:
    kind: str
    model: object  # ModelCheckpoint or list of GpModel
    seconds: float
    trace: list = field(default_factory=list)


def fit(kind: str, train_set: Dataset, settings: StudySettings, seed: int) -> FitResult:
    """Train a neural process or fit per-output GPs on a normalised dataset."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; use one of {MODEL_KINDS}")
    start = time.perf_counter()
    if kind in GP_KERNELS:
        models = gp_fit_columns(train_set.X, train_set.Y, GP_KERNELS[kind])
        return FitResult(kind, models, time.perf_counter() - start)
    norm = None if train_set.normalization is None else train_set.normalization.to_dict()
    res = train(settings.model_config(kind, train_set.m, train_set.p), train_set.X, train_set.Y,
                settings.train_config(seed), normalization=norm)
    return FitResult(kind, res.checkpoint, time.perf_counter() - start, res.trace)


def predict_with(fitted: FitResult | ModelCheckpoint | list, context: Dataset, x_targets,
                 samples: int = 20, seed: int = 0) -> PredictiveDistribution:
    """Predictions in normalised units, with ``context`` as the conditioning set."""
    model = fitted.model if isinstance(fitted, FitResult) else fitted
    if isinstance(model, ModelCheckpoint):
        return predict(model, context.X, context.Y, x_targets, rng=dc.make_rng(seed), samples=samples)
    return gp_predict_columns(model, x_targets)


def raw_report(test: Dataset, dist: PredictiveDistribution, ci_kind: str,
               with_mape: bool) -> EvalReport:
    """Metrics in physical units: means are de-normalised, stds rescaled."""
    norm = test.normalization
    d = dist.numpy()
    raw = PredictiveDistribution(norm.inverse_y(d.mean), norm.inverse_y_std(d.std))
    return evaluate(test.raw_Y(), raw, ci_kind, with_mape=with_mape)


# ---------------------------------------------------------------- spiral study


def spiral_split(noise_std: float, seed: int):
    ds = normalize(generate_spiral(SpiralConfig(noise_std=noise_std, seed=seed)))
    return split_train_test(ds, SplitSpec(50, seed=seed))


def run_spiral(kind: str, noise_std: float, seed: int, settings: StudySettings = StudySettings()) -> dict:
    split = spiral_split(noise_std, seed)
    fitted = fit(kind, split.train, settings, seed)
    dist = predict_with(fitted, split.train, split.test.X, settings.predict_samples, seed)
    rep = raw_report(split.test, dist, "one_sigma", with_mape=False)
    return {"kind": kind, "noise_std": noise_std, "seed": seed, "rmse": rep.rmse,
            "coverage": rep.coverage, "seconds": fitted.seconds}


# ---------------------------------------------------------------- tabular study

TABLE_SIZES = (30, 50, 60, 70, 80)


def tabular_split(seed: int, n: int = 106, test_count: int = 20, noise_std: float = 0.02,
                  sizes=TABLE_SIZES):
    ds = normalize(generate_synthetic6(n, noise_std=noise_std, seed=seed))
    return split_train_test(ds, SplitSpec(test_count, tuple(sizes) if sizes else None, seed=seed))


def run_tabular(kind: str, seed: int, settings: StudySettings = StudySettings(),
                sizes=TABLE_SIZES) -> list[dict]:
    """One row per nested training size: MAPE and ci95 coverage on the test set."""
    split = tabular_split(seed, sizes=sizes)
    rows = []
    for size in sizes:
        train_set = split.nested[size]
        fitted = fit(kind, train_set, settings, seed)
        dist = predict_with(fitted, train_set, split.test.X, settings.predict_samples, seed)
        rep = raw_report(split.test, dist, "ci95", with_mape=True)
        rows.append({"kind": kind, "seed": seed, "train_size": size, "mape": rep.mape,
                     "rmse": rep.rmse, "coverage": rep.coverage, "seconds": fitted.seconds})
    return rows
