"""Error hierarchy of the clv app.

``exit_code`` follows the CLI contract: 1 usage/validation, 3 numerical failure.
"""
from __future__ import annotations


class ClvError(Exception):
    exit_code = 1

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        msg = super().__str__()
        if not self.context:
            return msg
        ctx = ', '.join(f'{k}={v!r}' for k, v in self.context.items())
        return f'{msg} ({ctx})'


class InputError(ClvError):
    """Malformed input data (unparseable dates, negative prices, unknown columns)."""


class RangeError(ClvError):
    """A split or horizon outside the data window."""


class CovariateError(ClvError):
    """Covariate tables that do not match the dataset."""


class CoverageError(CovariateError):
    """Dynamic covariates do not reach far enough."""


class CapabilityError(ClvError):
    """The requested quantity is not available for this data or model."""


class DomainError(ClvError, ValueError):
    """Argument outside the mathematical domain."""


class UsageError(ClvError):
    """Inconsistent options."""


class StartValueError(ClvError):
    """Infeasible optimizer start."""


class ScenarioError(ClvError):
    """Simulation scenario that cannot be sampled."""


class NestingError(ClvError):
    """Models passed to a likelihood-ratio test are not nested."""


class InsufficientIterationsError(ClvError):
    """Too few successful bootstrap iterations."""


class NumericalError(ClvError, ArithmeticError):
    exit_code = 3


class DivergentMeanError(NumericalError):
    """Population mean spend requires q > 1."""
