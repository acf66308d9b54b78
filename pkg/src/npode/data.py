"""
Datasets: the two-dimensional spiral, a six-input synthetic stand-in for the
tribocorrosion table, [-2, 2] min-max normalisation, CSV files and splits.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffcore import make_rng
from .errors import ContractError, DegenerateColumnError, IngestionError

SPIRAL_MATRIX = np.array([[-0.1, -1.0], [1.0, -0.1]])


@dataclass
class Normalizer:
    """Per-column (min, max) for inputs and outputs."""

    x_min: np.ndarray
    x_max: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray

    @classmethod
    def fit(cls, X, Y) -> Normalizer:
        X, Y = np.asarray(X, float), np.asarray(Y, float)
        norm = cls(X.min(0), X.max(0), Y.min(0), Y.max(0))
        for prefix, lo, hi in (("x", norm.x_min, norm.x_max), ("y", norm.y_min, norm.y_max)):
            for j in np.flatnonzero(hi <= lo):
                raise DegenerateColumnError(f"column {prefix}{j + 1} is constant ({lo[j]:g})")
        return norm

    def _bounds(self, column: str):
        m = re.fullmatch(r"([xy])(\d+)", column)
        if not m:
            raise ContractError(f"bad column name {column!r}")
        j = int(m.group(2)) - 1
        lo, hi = (self.x_min, self.x_max) if m.group(1) == "x" else (self.y_min, self.y_max)
        if not 0 <= j < len(lo):
            raise ContractError(f"no column {column!r}")
        return lo[j], hi[j]

    @staticmethod
    def _fwd(v, lo, hi):
        return (np.asarray(v, float) - lo) / (hi - lo) * 4.0 - 2.0

    @staticmethod
    def _inv(v, lo, hi):
        return (np.asarray(v, float) + 2.0) / 4.0 * (hi - lo) + lo

    def transform_x(self, X):
        return self._fwd(X, self.x_min, self.x_max)

    def transform_y(self, Y):
        return self._fwd(Y, self.y_min, self.y_max)

    def inverse_x(self, X):
        return self._inv(X, self.x_min, self.x_max)

    def inverse_y(self, Y):
        return self._inv(Y, self.y_min, self.y_max)

    def inverse_y_std(self, S):
        """Standard deviations scale by (max - min) / 4 with no offset."""
        return np.asarray(S, float) * (self.y_max - self.y_min) / 4.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_min", "x_max", "y_min", "y_max")}

    @classmethod
    def from_dict(cls, d) -> Normalizer:
        return cls(*(np.asarray(d[k], float) for k in ("x_min", "x_max", "y_min", "y_max")))


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    provenance: str = "csv"
    normalization: Normalizer | None = None
    meta: dict = field(default_factory=dict)
    # noiseless responses, when the generator knows them
    Y_clean: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim < 2:
            self.Y = np.atleast_2d(self.Y)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ContractError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ContractError("dataset contains NaN or infinite values")

    def __len__(self):
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def is_normalized(self) -> bool:
        return self.normalization is not None

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        clean = None if self.Y_clean is None else self.Y_clean[idx]
        return replace(self, X=self.X[idx], Y=self.Y[idx], Y_clean=clean, meta=dict(self.meta))

    def raw_Y(self) -> np.ndarray:
        return self.Y if self.normalization is None else self.normalization.inverse_y(self.Y)

    def raw_X(self) -> np.ndarray:
        return self.X if self.normalization is None else self.normalization.inverse_x(self.X)


# ---------------------------------------------------------------- spiral


@dataclass(frozen=True)
class SpiralConfig:
    n_points: int = 200
    x_range: tuple[float, float] = (0.0, 4.0 * math.pi)
    y0: tuple[float, float] = (1.0, 0.0)
    scale: float = 4.0
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ContractError(f"noise_std must be non-negative, got {self.noise_std}")
        if self.n_points < 2:
            raise ContractError("n_points must be at least 2")


def spiral_flow(x) -> np.ndarray:
    """Exact flow of dy/dx = A y: e^{-0.1 x} times a rotation by x, shape (..., 2, 2)."""
    x = np.asarray(x, float)
    c, s = np.cos(x), np.sin(x)
    decay = np.exp(-0.1 * x)
    return decay[..., None, None] * np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def spiral_curve(x, y0=(1.0, 0.0), scale=4.0) -> np.ndarray:
    return scale * (spiral_flow(x) @ np.asarray(y0, float))


def generate_spiral(cfg: SpiralConfig = SpiralConfig()) -> Dataset:
    x = np.linspace(cfg.x_range[0], cfg.x_range[1], cfg.n_points)
    clean = spiral_curve(x, cfg.y0, cfg.scale)
    noise = make_rng(cfg.seed).standard_normal(clean.shape) * cfg.noise_std
    meta = {"generator": "spiral", "seed": cfg.seed, "noise_std": cfg.noise_std,
            "n_points": cfg.n_points, "x_range": list(cfg.x_range)}
    return Dataset(x[:, None], clean + noise, "spiral", meta=meta, Y_clean=clean)


# ---------------------------------------------------------------- synthetic six-input table

# (name, low, high) in the physical units of the tribocorrosion study
SYNTHETIC6_RANGES = [
    ("youngs_modulus", 55.0, 95.0),
    ("yield_strength", 1.0, 5.0),
    ("cathodic_tafel_slope", -280.0, -210.0),
    ("cathodic_exchange_current", 2e-8, 2e-7),
    ("anodic_tafel_slope", 250.0, 290.0),
    ("anodic_exchange_current", 1e-13, 5e-13),
]


def synthetic6_response(X) -> np.ndarray:
    """Noise-free response of the six-input generator.

    With ``t_j = (x_j - low_j) / (high_j - low_j)`` in [0, 1]::

        y = 1.5 + 0.6 t1 - 0.4 t2^2 + 0.5 t1 t2 + 0.3 sin(pi t3)
            + 0.8 exp(t4 - 1) + 0.2 t5 - 0.3 t4 t6

    The response stays within roughly [0.8, 3.3], so relative errors are
    well defined.
    """
    X = np.atleast_2d(np.asarray(X, float))
    lo = np.array([r[1] for r in SYNTHETIC6_RANGES])
    hi = np.array([r[2] for r in SYNTHETIC6_RANGES])
    t = (X - lo) / (hi - lo)
    t1, t2, t3, t4, t5, t6 = t.T
    return (
        1.5
        + 0.6 * t1
        - 0.4 * t2**2
        + 0.5 * t1 * t2
        + 0.3 * np.sin(np.pi * t3)
        + 0.8 * np.exp(t4 - 1.0)
        + 0.2 * t5
        - 0.3 * t4 * t6
    )


def generate_synthetic6(n: int = 106, noise_std: float = 0.02, seed: int = 0) -> Dataset:
    """Inputs uniform over the physical ranges; response plus Gaussian noise."""
    if n < 2:
        raise ContractError("n must be at least 2")
    if noise_std < 0:
        raise ContractError(f"noise_std must be non-negative, got {noise_std}")
    rng = make_rng(seed)
    lo = np.array([r[1] for r in SYNTHETIC6_RANGES])
    hi = np.array([r[2] for r in SYNTHETIC6_RANGES])
    X = lo + (hi - lo) * rng.uniform(size=(n, 6))
    clean = synthetic6_response(X)[:, None]
    Y = clean + noise_std * rng.standard_normal(clean.shape)
    meta = {"generator": "synthetic6", "seed": seed, "noise_std": noise_std, "n_points": n}
    return Dataset(X, Y, "synthetic6", meta=meta, Y_clean=clean)


# ---------------------------------------------------------------- normalisation


def normalize(ds: Dataset) -> Dataset:
    """Map every input and output column to [-2, 2] by its own min and max."""
    if ds.is_normalized:
        return ds
    norm = Normalizer.fit(ds.X, ds.Y)
    clean = None if ds.Y_clean is None else norm.transform_y(ds.Y_clean)
    return replace(ds, X=norm.transform_x(ds.X), Y=norm.transform_y(ds.Y),
                   normalization=norm, Y_clean=clean, meta=dict(ds.meta))


def denormalize(ds: Dataset | Normalizer, values, column: str, std: bool = False) -> np.ndarray:
    """Physical-unit values of a normalised ``column`` (``"x1"``, ``"y2"``, ...).

    With ``std=True`` the values are standard deviations and only the scale is
    undone.
    """
    norm = ds.normalization if isinstance(ds, Dataset) else ds
    if norm is None:
        raise ContractError("dataset carries no normalisation state")
    lo, hi = norm._bounds(column)
    values = np.asarray(values, float)
    if std:
        return values * (hi - lo) / 4.0
    return (values + 2.0) / 4.0 * (hi - lo) + lo


# ---------------------------------------------------------------- CSV


def _columns(header):
    xs, ys = {}, {}
    for pos, name in enumerate(header):
        m = re.fullmatch(r"\s*([xy])(\d+)\s*", name)
        if not m:
            continue
        (xs if m.group(1) == "x" else ys)[int(m.group(2))] = pos
    return xs, ys


def load_csv(path, require_outputs: bool = True) -> Dataset:
    """Read a table with ``x1..xm`` input and ``y1..yp`` output columns.

    With ``require_outputs=False`` a file of inputs only is accepted and the
    returned dataset has zero output columns.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise IngestionError(f"{path}: missing header row")
        xs, ys = _columns(header)
        if not xs or (require_outputs and not ys):
            raise IngestionError(f"{path}: header needs x1..xm and y1..yp columns, got {header}")
        for prefix, cols in (("x", xs), ("y", ys)):
            if sorted(cols) != list(range(1, len(cols) + 1)):
                raise IngestionError(f"{path}: {prefix} columns are not numbered 1..{len(cols)}")
        xpos = [xs[i] for i in sorted(xs)]
        ypos = [ys[i] for i in sorted(ys)]
        X, Y = [], []
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                X.append([float(row[p]) for p in xpos])
                Y.append([float(row[p]) for p in ypos])
            except (ValueError, IndexError):
                raise IngestionError(
                    f"{path}: row {rownum} has a missing or non-numeric field"
                ) from None
            if not all(math.isfinite(v) for v in X[-1] + Y[-1]):
                raise IngestionError(f"{path}: row {rownum} has a non-finite value")
    if not X:
        raise IngestionError(f"{path}: no data rows")
    meta = {}
    sidecar = metadata_path(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    prov = meta.get("provenance", "csv")
    Y = np.array(Y) if ys else np.zeros((len(X), 0))
    return Dataset(np.array(X), Y, prov, meta=meta.get("meta", {}))


def write_csv(ds: Dataset, path, write_metadata: bool = True) -> Path:
    """Write raw-unit values with round-trip precision and a JSON sidecar."""
    path = Path(path)
    X, Y = ds.raw_X(), ds.raw_Y()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j + 1}" for j in range(ds.m)] + [f"y{j + 1}" for j in range(ds.p)])
        for xr, yr in zip(X, Y):
            writer.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in yr])
    if write_metadata:
        doc = {
            "provenance": ds.provenance,
            "rows": len(ds),
            "inputs": ds.m,
            "outputs": ds.p,
            "meta": ds.meta,
            "normalization": None if ds.normalization is None else ds.normalization.to_dict(),
        }
        metadata_path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    test_count: int
    nested_train_sizes: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        sizes = self.nested_train_sizes
        if sizes is not None and any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ContractError(f"nested sizes must be strictly increasing, got {sizes}")
        if self.test_count < 1:
            raise ContractError("test_count must be at least 1")


@dataclass
class Split:
    train: Dataset
    test: Dataset
    nested: dict[int, Dataset] = field(default_factory=dict)
    train_index: np.ndarray | None = None
    test_index: np.ndarray | None = None


def split_train_test(ds: Dataset, spec: SplitSpec) -> Split:
    """Seeded random test selection; nested training subsets grow by appending
    rows in a fixed random order, so each subset contains the previous one."""
    n = len(ds)
    if spec.test_count >= n:
        raise ContractError(f"test_count {spec.test_count} leaves no training rows out of {n}")
    n_train = n - spec.test_count
    sizes = spec.nested_train_sizes or ()
    if sizes and sizes[-1] > n_train:
        raise ContractError(f"nested size {sizes[-1]} exceeds the {n_train} training rows")
    perm = make_rng(spec.seed).permutation(n)
    test_idx, train_idx = perm[: spec.test_count], perm[spec.test_count :]
    nested = {k: ds.subset(train_idx[:k]) for k in sizes}
    return Split(ds.subset(train_idx), ds.subset(test_idx), nested, train_idx, test_idx)
