"""Stochastic calibrated loss ensembles for binary classification."""

from ._ensloss import *  # noqa: F401,F403
from ._ensloss import __doc__  # noqa: F401
