"""eqdisco: differential-equation discovery with uncertainty quantification.

Evolves candidate equations from observational time series without a fixed
term library, aggregates repeated discoveries into a joint term
distribution (a Bayesian network), samples coherent equation systems from
it, and propagates the coefficient uncertainty into solution-space
envelopes by numerical integration. A fixed-library bootstrapped STLSQ
baseline is included for comparison.
"""

__version__ = "0.1.0"

from .dataio import DataSet, differentiate, load_csv, normalize, refine
from .errors import EqDiscoError
from .evolution import EvoConfig, evolve
from .tokens import Equation, Term, Token

__all__ = [
    "DataSet",
    "EqDiscoError",
    "Equation",
    "EvoConfig",
    "Term",
    "Token",
    "__version__",
    "differentiate",
    "evolve",
    "load_csv",
    "normalize",
    "refine",
]
