"""Locally differentially private two-sample tests calibrated by permutation."""

from .mechanisms import PrivacyBudget
from .rng import RngStream
from .stats import PooledSample, TestOutcome

__all__ = ["PrivacyBudget", "PooledSample", "RngStream", "TestOutcome"]
__version__ = "0.1.0"
