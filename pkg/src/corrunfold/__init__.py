"""Exact and approximate dynamics of a qubit in a bath of two-level systems,
with the system-bath correlation operator implied by each master equation."""
from .errors import ConfigError, ContractViolation, NumericalError
from .mesolve import MethodId
from .opalg import TruncatedBasis

__all__ = ["ConfigError", "ContractViolation", "MethodId", "NumericalError", "TruncatedBasis"]
__version__ = "0.1.0"
