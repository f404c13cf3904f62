# pde_discovery/__init__.py

"""PDE discovery from noisy field data with sparse Bayesian learning and MCMC model updating."""

from pde_discovery.errors import (
    ConfigurationError,
    NonConvergenceError,
    NumericalError,
    PdeDiscoveryError,
)
from pde_discovery.fields import FieldSeries, GridSpec, read_field, write_field

__all__ = [
    "ConfigurationError",
    "FieldSeries",
    "GridSpec",
    "NonConvergenceError",
    "NumericalError",
    "PdeDiscoveryError",
    "read_field",
    "write_field",
]
