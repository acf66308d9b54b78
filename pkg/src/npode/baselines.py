"""
Exact Gaussian-process regression with Matern and polynomial kernels.

Hyperparameters are picked by exhaustive search over a fixed grid, scoring
each point by the log marginal likelihood of the training targets.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import ContractError, IllConditionedKernelError
from .predictive import PredictiveDistribution

GP_FORMAT = "npode-gp/1"
JITTER_START = 1e-10
JITTER_MAX = 1e-4

KERNELS = ("matern52", "matern32", "polynomial")

DEFAULT_GRIDS = {
    "matern": {
        "lengthscale": np.geomspace(0.05, 5.0, 9),
        "signal_var": np.array([0.25, 1.0, 4.0]),
        "noise_var": np.geomspace(1e-6, 1.0, 7),
    },
    "polynomial": {
        "gamma": np.geomspace(0.01, 1.0, 5),
        "offset": np.array([0.0, 1.0]),
        "degree": np.array([2, 3]),
        "noise_var": np.geomspace(1e-6, 1.0, 7),
    },
}


def _pairwise_dist(A, B):
    sq = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    return np.sqrt(np.maximum(sq, 0.0))


def matern_kernel(x, z, lengthscale: float, signal_var: float, nu: float = 2.5):
    """Matern covariance for nu = 5/2 (default) or 3/2.

    ``x`` and ``z`` may be single vectors (returns a float) or row matrices
    (returns the Gram matrix).
    """
    if lengthscale <= 0 or signal_var <= 0:
        raise ContractError("lengthscale and signal variance must be positive")
    single = np.ndim(x) == 1 and np.ndim(z) == 1
    r = _pairwise_dist(np.atleast_2d(x).astype(float), np.atleast_2d(z).astype(float))
    if nu == 2.5:
        a = math.sqrt(5.0) * r / lengthscale
        k = signal_var * (1.0 + a + a * a / 3.0) * np.exp(-a)
    elif nu == 1.5:
        a = math.sqrt(3.0) * r / lengthscale
        k = signal_var * (1.0 + a) * np.exp(-a)
    else:
        raise ContractError(f"Matern smoothness {nu} not supported (use 1.5 or 2.5)")
    return float(k[0, 0]) if single else k


def polynomial_kernel(x, z, gamma: float, offset: float, degree: int):
    """``(gamma <x, z> + offset) ** degree``."""
    if gamma <= 0 or offset < 0 or int(degree) not in (2, 3):
        raise ContractError("need gamma > 0, offset >= 0 and degree in {2, 3}")
    single = np.ndim(x) == 1 and np.ndim(z) == 1
    k = (gamma * (np.atleast_2d(x) @ np.atleast_2d(z).T) + offset) ** int(degree)
    return float(k[0, 0]) if single else k


def _gram(kernel: str, hyper: dict, A, B):
    if kernel == "polynomial":
        return polynomial_kernel(A, B, hyper["gamma"], hyper["offset"], int(hyper["degree"]))
    nu = 2.5 if kernel == "matern52" else 1.5
    return matern_kernel(A, B, hyper["lengthscale"], hyper["signal_var"], nu)


def cholesky_with_jitter(K: np.ndarray):
    """Lower Cholesky factor, adding diagonal jitter 1e-10, 1e-9, ... up to 1e-4
    if the plain factorisation fails. Returns ``(L, jitter_used)``."""
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(len(K))), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise IllConditionedKernelError(
                    "kernel matrix is not positive definite even with 1e-4 jitter"
                ) from None


@dataclass
class GpModel:
    kernel: str
    hyperparams: dict
    X: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    jitter: float
    log_marginal_likelihood: float
    # (hyperparams, log ML) for every grid point tried; empty for fixed fits
    grid_scores: list = field(default_factory=list, repr=False)

    @property
    def noise_var(self) -> float:
        return float(self.hyperparams["noise_var"])

    def to_json(self) -> str:
        from .training import encode_array

        doc = {
            "format": GP_FORMAT,
            "kernel": self.kernel,
            "hyperparams": {k: float(v) for k, v in sorted(self.hyperparams.items())},
            "jitter": self.jitter,
            "log_marginal_likelihood": self.log_marginal_likelihood,
            "X": encode_array(self.X),
            "L": encode_array(self.L),
            "alpha": encode_array(self.alpha),
        }
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> GpModel:
        from .training import decode_array

        doc = json.loads(text)
        if doc.get("format") != GP_FORMAT:
            raise ContractError(f"not a GP model file (format tag {doc.get('format')!r})")
        return cls(doc["kernel"], doc["hyperparams"], decode_array(doc["X"]),
                   decode_array(doc["L"]), decode_array(doc["alpha"]), doc["jitter"],
                   doc["log_marginal_likelihood"])

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> GpModel:
        return cls.from_json(Path(path).read_text())


def _fit_one(kernel, hyper, X, y):
    K = _gram(kernel, hyper, X, X) + hyper["noise_var"] * np.eye(len(X))
    L, jitter = cholesky_with_jitter(K)
    alpha = cho_solve((L, True), y)
    n = len(X)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * math.log(2 * math.pi)
    return GpModel(kernel, dict(hyper), X, L, alpha, jitter, lml)


def hyperparameter_grid(kernel: str, grids: dict | None = None) -> list[dict]:
    family = "polynomial" if kernel == "polynomial" else "matern"
    g = dict(DEFAULT_GRIDS[family])
    g.update(grids or {})
    names = list(g)
    return [dict(zip(names, (float(v) for v in combo))) for combo in itertools.product(*g.values())]


def gp_fit(X, y, kernel: str = "matern52", hyperparams: dict | None = None,
           grids: dict | None = None) -> GpModel:
    """Fit a zero-mean GP to single-output data.

    With ``hyperparams`` the given values are used directly; otherwise every
    point of the hyperparameter grid is scored and the best log marginal
    likelihood wins. Grid points whose kernel cannot be factorised are skipped.
    """
    if kernel not in KERNELS:
        raise ContractError(f"unknown kernel {kernel!r}; use one of {KERNELS}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        if y.shape[1] != 1:
            raise ContractError("gp_fit handles a single output; fit one GP per column")
        y = y[:, 0]
    if len(X) != len(y) or len(X) < 2:
        raise ContractError("need at least two row-aligned training points")
    if hyperparams is not None:
        return _fit_one(kernel, hyperparams, X, y)
    best, scores = None, []
    for hyper in hyperparameter_grid(kernel, grids):
        try:
            model = _fit_one(kernel, hyper, X, y)
        except IllConditionedKernelError:
            continue
        scores.append((hyper, model.log_marginal_likelihood))
        if best is None or model.log_marginal_likelihood > best.log_marginal_likelihood:
            best = model
    if best is None:
        raise IllConditionedKernelError("no grid point gave a factorisable kernel matrix")
    best.grid_scores = scores
    return best


def gp_predict(model: GpModel, x_targets) -> PredictiveDistribution:
    """Posterior predictive for noisy observations; shapes (T, 1)."""
    Xs = np.atleast_2d(np.asarray(x_targets, dtype=float))
    Ks = _gram(model.kernel, model.hyperparams, model.X, Xs)
    mean = Ks.T @ model.alpha
    v = solve_triangular(model.L, Ks, lower=True)
    prior_var = np.diag(_gram(model.kernel, model.hyperparams, Xs, Xs))
    var = prior_var + model.noise_var - np.sum(v * v, axis=0)
    var = np.maximum(var, model.noise_var)
    return PredictiveDistribution(mean[:, None], np.sqrt(var)[:, None])


def gp_fit_columns(X, Y, kernel: str = "matern52", **kw) -> list[GpModel]:
    """One independent GP per output column."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return [gp_fit(X, Y[:, j], kernel, **kw) for j in range(Y.shape[1])]


def gp_predict_columns(models: list[GpModel], x_targets) -> PredictiveDistribution:
    preds = [gp_predict(m, x_targets) for m in models]
    return PredictiveDistribution(np.hstack([p.mean for p in preds]), np.hstack([p.std for p in preds]))
