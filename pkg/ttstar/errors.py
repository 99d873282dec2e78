"""Exception hierarchy for numerical failures."""
from typing import Optional


class TtStarError(Exception):
    """Base class; `code` is the machine-readable tag used in run reports."""
    code = "numerical_error"


class DomainError(TtStarError, ValueError):
    code = "domain_error"


class SingularLoop(TtStarError):
    code = "singular_loop"


class BudgetExceeded(TtStarError):
    code = "budget_exceeded"


class NotTwisted(TtStarError):
    code = "not_twisted"


class OffBigCell(TtStarError):
    """
    Factorization left the big cell, or could not be resolved at the
    configured truncation.

    Args:
        message: Human-readable reason
        condition: Condition estimate of the Toeplitz system, if known
        residual: Reconstruction residual, if known
        retryable: True when a larger truncation degree may succeed
    """
    code = "off_big_cell"

    def __init__(self, message: str, condition: Optional[float] = None,
                 residual: Optional[float] = None, retryable: bool = False):
        super().__init__(message)
        self.condition = condition
        self.residual = residual
        self.retryable = retryable


class OrbitBoundary(OffBigCell):
    code = "orbit_boundary"


class NonRealResult(TtStarError):
    code = "non_real_result"


class NotInRealForm(TtStarError):
    code = "not_in_real_form"


class GridTooCoarse(TtStarError):
    code = "grid_too_coarse"


class SeedOutOfRegime(TtStarError):
    code = "seed_out_of_regime"


class ToleranceUnachievable(TtStarError):
    code = "tolerance_unachievable"
