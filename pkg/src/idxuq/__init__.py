"""idxuq: uncertainty-aware index benefit estimation on a synthetic oracle.

The package trains a small learned benefit estimator on synthetic
query/index data, quantifies per-prediction uncertainty with a decoder
reconstruction error plus Monte-Carlo dropout variance, filters unreliable
predictions to a what-if fallback, and measures the effect on
budget-constrained index tuning.
"""

from . import advisor, estimator, evalkit, featurize, neural, synthdb, uq

__version__ = "0.1.0"

__all__ = [
    "advisor",
    "estimator",
    "evalkit",
    "featurize",
    "neural",
    "synthdb",
    "uq",
]
