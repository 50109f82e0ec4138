"""Exception types shared across the package.

Numerical failures carry witness data so callers (and the CLI exit-code
machinery) can name the invariant that broke.
"""


class EigenEchoError(Exception):
    """Base class for all package errors."""


class ConfigError(EigenEchoError):
    """Configuration file failed validation; `path` names the offending field."""

    def __init__(self, message, path=""):
        super().__init__(message)
        self.path = path


class FamilyError(EigenEchoError):
    """Metric family construction rejected its inputs."""


class PositivityError(EigenEchoError):
    """g_u^{-1} failed positive definiteness; carries the violating point."""

    def __init__(self, message, x=None, u=None):
        super().__init__(message)
        self.x = x
        self.u = u


class NumericsError(EigenEchoError):
    """Base class for runtime numerical failures (CLI exit code 3)."""

    invariant = "numerical"


class StepSizeUnderflow(NumericsError):
    invariant = "ode-step-size"

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class CausticError(NumericsError):
    invariant = "caustic-margin"


class PropagationError(NumericsError):
    invariant = "krylov-propagation"


class NewtonNoConvergence(NumericsError):
    invariant = "newton-convergence"

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NewtonOutOfBox(NumericsError):
    invariant = "newton-parameter-box"

    def __init__(self, message, u_prime=None):
        super().__init__(message)
        self.u_prime = u_prime


class ExcludedNodeError(NumericsError):
    invariant = "beta-excluded-nodes"
