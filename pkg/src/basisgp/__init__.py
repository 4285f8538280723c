"""GP regression with learned low-rank basis-function kernels.

The kernel k(x1, x2) = <phi(x1), phi(x2)> is the inner product of r
neural basis functions, making the Gram matrix rank-r and exact GP
inference linear in the number of data points. The package provides
exact full-batch training (`exact`), mini-batch stochastic variational
training in weight space (`svi`), a variance-correction procedure that
repairs the overconfidence of learned low-rank kernels (`correction`), a
dense RBF-ARD baseline (`dense`), plus data utilities, metrics,
benchmarks and a CLI.
"""

from .config import RunConfig, TrainConfig
from .correction import CorrectionStats
from .data import Dataset, NormStats
from .exact import ExactState, NoiseParam
from .network import AdamState, FeatureMap, GradientBundle
from .predictive import PredictiveDistribution
from .svi import VariationalState

__all__ = [
    "AdamState",
    "CorrectionStats",
    "Dataset",
    "ExactState",
    "FeatureMap",
    "GradientBundle",
    "NoiseParam",
    "NormStats",
    "PredictiveDistribution",
    "RunConfig",
    "TrainConfig",
    "VariationalState",
]
