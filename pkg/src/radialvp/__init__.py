"""Radial Vlasov-Poisson around a repulsive point charge, in action-angle variables."""

from .structfn import ConvergenceError, DomainError

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "DomainError", "__version__"]
