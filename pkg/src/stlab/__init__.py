"""Student-teacher learning laboratory.

Tools for studying feature-based knowledge transfer from a teacher trained
on clean inputs to a student trained on noisy inputs: deep linear networks
with closed-form solution oracles, decomposed sparse (LASSO) transfer, and
shallow ReLU experiments, plus a reproducible experiment harness.
"""

__version__ = "0.1.0"

from . import numerics
from . import datagen
from . import oracles
from . import linear_net
from . import lasso
from . import relu_net
from . import experiments

__all__ = [
    "numerics",
    "datagen",
    "oracles",
    "linear_net",
    "lasso",
    "relu_net",
    "experiments",
]
