"""Sparse support recovery: classical solvers, adaptive IHT and learned support classifiers."""
from .model import (
    BudgetExceededError,
    Dictionary,
    InfeasibleError,
    RankDeficientError,
    RecoveryResult,
    SparseLabError,
    SparseSignal,
    brute_force_l0,
    labels_from_signal,
    least_squares_on_support,
)

__version__ = "0.1.0"
