"""
Surrogate accuracy against training-set size
============================================

A six-input, one-output response surface with mild interactions stands in for
an expensive simulator. A fixed 20-row test set is held out and each model is
retrained on nested training sets of 30, 50, 60, 70 and 80 rows, so every
larger set contains every smaller one. MAPE on the test set should fall as the
training set grows.

The Gaussian process baselines take seconds. The neural processes take
minutes per size at full length, so ``--quick`` shortens their training.
"""

import argparse

from npode.experiments import TABLE_SIZES, StudySettings, run_tabular

parser = argparse.ArgumentParser()
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--quick", action="store_true")
parser.add_argument("--models", default="gp-matern,gp-poly,np,npode")
args = parser.parse_args()

settings = StudySettings(iterations=300 if args.quick else 10000)
kinds = args.models.split(",")

table = {}
for kind in kinds:
    rows = run_tabular(kind, args.seed, settings)
    table[kind] = {r["train_size"]: r for r in rows}
    print(f"finished {kind}")

# MAPE (percent) by training size, one column per model.
print("\n" + "size".ljust(6) + "".join(k.rjust(12) for k in kinds))
for size in TABLE_SIZES:
    print(str(size).ljust(6) + "".join(f"{100 * table[k][size]['mape']:11.2f}%" for k in kinds))

print("\nci95 coverage on the 20 test rows at 80 training rows:")
for kind in kinds:
    print(f"  {kind:<10} {table[kind][80]['coverage']:.2f}")
