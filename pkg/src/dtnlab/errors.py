"""Exception hierarchy.

Errors split in two families so the command line can map them onto exit
codes: configuration problems (bad inputs, exit 2) and numerical failures
(exit 3).
"""


class DtnError(Exception):
    """Base class for every error raised by dtnlab."""


class ConfigError(DtnError, ValueError):
    exit_code = 2


class NumericalError(DtnError, ArithmeticError):
    exit_code = 3


class EmptyNetwork(ConfigError):
    pass


class InvalidNode(ConfigError, KeyError):
    pass


class InvalidRange(ConfigError):
    pass


class HorizonExceeded(ConfigError):
    pass


class InvalidInput(ConfigError):
    pass


class DegenerateWindow(NumericalError):
    pass


class TooFewPoints(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class StepTooLarge(NumericalError):
    pass


class DegenerateInitial(NumericalError):
    pass


class DegenerateSamples(NumericalError):
    pass


class InconsistentSamples(NumericalError):
    pass
