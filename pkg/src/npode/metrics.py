"""Point and interval metrics for probabilistic regression."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedMetricError
from .predictive import PredictiveDistribution

CI_MULTIPLIERS = {"one_sigma": 1.0, "ci95": 1.96}


def _matrix(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def rmse(y_true, y_pred) -> float:
    """Root of the squared error averaged over all N * p entries."""
    y_true, y_pred = _matrix(y_true), _matrix(y_pred)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.shape[0] < 1:
        raise ContractError("rmse needs at least one row")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def mape(y_true, y_pred) -> float:
    """Mean absolute percentage error, as a fraction."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ContractError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    zero = np.flatnonzero(y_true == 0)
    if zero.size:
        raise UndefinedMetricError(f"MAPE undefined: y_true is zero at row {int(zero[0])}")
    return float(np.mean(np.abs(y_true - y_pred) / np.abs(y_true)))


def confidence_interval(dist: PredictiveDistribution, kind: str = "ci95"):
    """``(low, high)`` arrays: mean -/+ sigma (``one_sigma``) or 1.96 sigma (``ci95``)."""
    if kind not in CI_MULTIPLIERS:
        raise ContractError(f"unknown interval kind {kind!r}; use one of {sorted(CI_MULTIPLIERS)}")
    mean, std = dist.numpy().mean, dist.numpy().std
    if np.any(std <= 0):
        raise ContractError("interval needs strictly positive standard deviations")
    half = CI_MULTIPLIERS[kind] * std
    return mean - half, mean + half


def coverage(y_true, intervals):
    """Fraction of points whose every output lies in ``[low, high]``.

    Returns ``(fraction, flags, per_dimension_fractions)``.
    """
    low, high = (_matrix(a) for a in intervals)
    y = _matrix(y_true)
    if not y.shape == low.shape == high.shape:
        raise ContractError(f"shape mismatch: y {y.shape}, intervals {low.shape}/{high.shape}")
    inside = (low <= y) & (y <= high)
    flags = inside.all(axis=1)
    return float(flags.mean()), flags, inside.mean(axis=0)


@dataclass
class EvalReport:
    rmse: float
    mape: float | None
    coverage: float
    ci_kind: str
    y_true: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    covered: np.ndarray
    per_dim_coverage: np.ndarray
    X: np.ndarray | None = None

    def summary(self) -> str:
        m = "n/a" if self.mape is None else f"{self.mape:.6g}"
        return f"rmse={self.rmse:.6g} mape={m} coverage={self.coverage:.4f} ci={self.ci_kind}"

    def to_csv(self) -> str:
        p = self.y_true.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        m = 0 if self.X is None else self.X.shape[1]
        header = ["row"] + [f"x{j}" for j in range(1, m + 1)]
        for j in range(1, p + 1):
            header += [f"y{j}_true", f"y{j}_mean", f"y{j}_std", f"y{j}_low", f"y{j}_high"]
        w.writerow(header + ["covered"])
        for i in range(len(self.y_true)):
            row = [i] + [repr(float(v)) for v in (self.X[i] if m else ())]
            for j in range(p):
                row += [repr(float(a[i, j])) for a in
                        (self.y_true, self.mean, self.std, self.ci_low, self.ci_high)]
            w.writerow(row + [int(self.covered[i])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, ci_kind: str = "ci95") -> EvalReport:
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ContractError("empty evaluation report")
        p = sum(1 for k in rows[0] if k.endswith("_true"))

        def col(suffix):
            return np.array([[float(r[f"y{j}_{suffix}"]) for j in range(1, p + 1)] for r in rows])

        y, mean, std, lo, hi = (col(s) for s in ("true", "mean", "std", "low", "high"))
        m = sum(1 for k in rows[0] if k.startswith("x"))
        X = np.array([[float(r[f"x{j}"]) for j in range(1, m + 1)] for r in rows]) if m else None
        covered = np.array([bool(int(r["covered"])) for r in rows])
        mape_value = None if np.any(y == 0) else mape(y, mean)
        return cls(rmse(y, mean), mape_value, float(covered.mean()), ci_kind, y, mean, std, lo, hi,
                   covered, ((lo <= y) & (y <= hi)).mean(axis=0), X)


def evaluate(y_true, dist: PredictiveDistribution, ci_kind: str = "ci95",
             with_mape: bool = True, X=None) -> EvalReport:
    """All metrics for one set of predictions, in whatever units they are given."""
    d = dist.numpy()
    y = _matrix(y_true)
    mean, std = _matrix(d.mean), _matrix(d.std)
    low, high = confidence_interval(PredictiveDistribution(mean, std), ci_kind)
    frac, flags, per_dim = coverage(y, (low, high))
    m = mape(y, mean) if with_mape else None
    X = None if X is None else _matrix(X)
    return EvalReport(rmse(y, mean), m, frac, ci_kind, y, mean, std, low, high, flags, per_dim, X)
