"""Numerical holonomy laboratory for Ricci flows on model geometries.

Curvature is computed by forward-mode automatic differentiation of closed-form
metrics, so JAX is switched to double precision on import.
"""

import jax

jax.config.update("jax_enable_x64", True)

from .errors import (  # noqa: E402
    ConfigurationError,
    ContractError,
    DomainError,
    ExtinctionError,
    ParameterError,
)

__all__ = [
    "ConfigurationError",
    "ContractError",
    "DomainError",
    "ExtinctionError",
    "ParameterError",
]

__version__ = "0.1.0"
