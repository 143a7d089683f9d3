"""Exception hierarchy shared by all modules.

Validation problems derive from ``ValueError`` and numerical failures from
``ArithmeticError`` so callers (the CLI in particular) can map them to exit
codes without enumerating every class.
"""


class ChannelError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ChannelError, ValueError):
    pass


class NumericalError(ChannelError, ArithmeticError):
    pass


class NonPositiveNoiseVariance(ValidationError):
    pass


class NegativePower(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


class OutOfScope(ValidationError):
    pass


class OutOfValidityRange(ValidationError):
    pass


class InfeasibleSplit(ValidationError):
    pass


class Divergent(NumericalError):
    """A Lyapunov recursion has no finite fixed point."""


class Diverged(NumericalError):
    """A Riccati trajectory exceeded the divergence ceiling."""


class NoStabilizingSolution(NumericalError):
    pass


class OptimizerFailed(NumericalError):
    pass


class RootFindFailed(NumericalError):
    pass
