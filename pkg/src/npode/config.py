"""
Run configuration: flat ``section.key = value`` text files.

Every key has a default; unknown keys and unparsable values are rejected with
the offending key named. ``resolved_text`` renders the full configuration,
defaults included, in the same format so a run can be reproduced from it.
"""

from __future__ import annotations

import copy
from pathlib import Path

from .errors import ConfigError

DEFAULTS: dict[str, dict[str, object]] = {
    "run": {"seed": 0, "out": "out"},
    "data": {
        "source": "spiral",  # spiral | synthetic6 | path to a CSV file
        "n_points": 200,
        "noise_std": 0.01,
        "x_start": 0.0,
        "x_end": 12.566370614359172,
    },
    "split": {"test_count": 50, "nested_train_sizes": ""},
    "model": {
        "kind": "npode",  # npode | np | gp-matern | gp-poly
        "feature_width": 128,
        "latent_dim": 128,
        "num_heads": 8,
        "ode_channels": 128,
        "kernel_size": 3,
        "encoder_layers": 3,
        "mlp_layers": 3,
        "solver_start": 0.0,
        "solver_end": 1.0,
        "solver_step": 0.05,
    },
    "train": {
        "iterations": 10000,
        "learning_rate": 1e-4,
        "lr_schedule": "constant",
        "lr_floor": 0.01,
        "context_min": 0.3,
        "context_max": 0.9,
        "latent_samples_train": 1,
        "latent_samples_predict": 1,
        "kl_per_target": True,
        "grad_clip": 10.0,
        "trace_every": 100,
    },
    "eval": {"ci": "auto"},  # auto | one_sigma | ci95
}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


class RunConfig:
    """Nested mapping ``section -> key -> value`` seeded with :data:`DEFAULTS`."""

    def __init__(self, values: dict | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        for key, val in (values or {}).items():
            self.set(key, val)

    def set(self, dotted: str, value) -> None:
        section, _, key = dotted.partition(".")
        if section not in self.values or key not in self.values[section]:
            raise ConfigError(f"unknown configuration key {dotted!r}")
        default = DEFAULTS[section][key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _coerce(dotted, value, default)
        self.values[section][key] = value

    def __getitem__(self, dotted: str):
        section, _, key = dotted.partition(".")
        try:
            return self.values[section][key]
        except KeyError:
            raise ConfigError(f"unknown configuration key {dotted!r}") from None

    @classmethod
    def parse(cls, text: str, origin: str = "<config>") -> RunConfig:
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{origin}:{lineno}: expected 'section.key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(key, value)
            except ConfigError as err:
                raise ConfigError(f"{origin}:{lineno}: {err}") from None
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
        return cls.parse(text, str(path))

    def nested_sizes(self) -> tuple[int, ...] | None:
        raw = str(self["split.nested_train_sizes"]).strip()
        if not raw:
            return None
        try:
            return tuple(int(s) for s in raw.replace(" ", "").split(",") if s)
        except ValueError:
            raise ConfigError(f"split.nested_train_sizes: bad list {raw!r}") from None

    def resolved_text(self) -> str:
        lines = []
        for section in DEFAULTS:
            for key, val in self.values[section].items():
                if isinstance(val, bool):
                    val = str(val).lower()
                lines.append(f"{section}.{key} = {val!r}" if isinstance(val, float) else f"{section}.{key} = {val}")
        return "\n".join(lines) + "\n"
