from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor

STD_FLOOR = 0.01


@dataclass
class PredictiveDistribution:
    """Per-target Gaussian predictions; ``mean`` and ``std`` have shape (T, p)."""

    mean: np.ndarray | Tensor
    std: np.ndarray | Tensor

    def numpy(self) -> PredictiveDistribution:
        m = self.mean.value if isinstance(self.mean, Tensor) else self.mean
        s = self.std.value if isinstance(self.std, Tensor) else self.std
        return PredictiveDistribution(np.array(m), np.array(s))

    def __len__(self):
        return self.mean.shape[0]
