"""
Gaussian process baselines on a small design
============================================

Fits the Matern 5/2 and polynomial-kernel GPs to a one-dimensional slice of
noisy data, showing the selected hyperparameters, the log marginal likelihood
that picked them, and how the predictive band widens away from the data.
"""

import numpy as np

from npode.baselines import gp_fit, gp_predict

rng = np.random.default_rng(0)
X = np.sort(rng.uniform(-2, 1, 15))[:, None]
y = np.sin(2 * X[:, 0]) + 0.05 * rng.standard_normal(15)

for kernel in ("matern52", "polynomial"):
    model = gp_fit(X, y, kernel)
    print(f"{kernel}: log marginal likelihood {model.log_marginal_likelihood:.3f}")
    print("  hyperparameters:", {k: round(float(v), 6) for k, v in model.hyperparams.items()})

    # Query inside the data range and beyond its right edge (x > 1).
    xq = np.array([[-1.0], [0.0], [1.0], [1.5], [2.0]])
    dist = gp_predict(model, xq)
    for x, m, s in zip(xq[:, 0], dist.mean[:, 0], dist.std[:, 0]):
        print(f"  x={x:+.1f}  mean {m:+.3f}  std {s:.3f}  truth {np.sin(2 * x):+.3f}")
