# pde_discovery/errors.py

"""
Exception hierarchy for the whole pipeline.

Every class carries the exit code the command-line driver returns for it,
so flows can simply let errors propagate up to app.py.
"""


class PdeDiscoveryError(Exception):
    exit_code = 1


# ------------------------------
# Configuration problems (exit 2)
# ------------------------------

class ConfigurationError(PdeDiscoveryError, ValueError):
    exit_code = 2


# ------------------------------
# Numerical failures (exit 3)
# ------------------------------

class NumericalError(PdeDiscoveryError, ArithmeticError):
    exit_code = 3


class SolverInstabilityError(NumericalError):
    pass


class DegenerateDataError(NumericalError):
    pass


class DenoiserDivergedError(NumericalError):
    pass


class PosteriorBreakdownError(NumericalError):
    pass


class FastUpdateMismatchError(NumericalError):
    pass


class TruncationMassError(NumericalError):
    pass


# ------------------------------
# Soft failures surfaced by the CLI (exit 4)
# ------------------------------

class NonConvergenceError(PdeDiscoveryError):
    exit_code = 4
