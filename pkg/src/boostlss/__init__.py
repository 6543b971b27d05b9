"""Component-wise boosting for zero-adjusted distributional regression."""

from .distributions import FAMILIES, DomainError, get_family

__version__ = "0.1.0"

__all__ = ["FAMILIES", "DomainError", "get_family", "__version__"]
