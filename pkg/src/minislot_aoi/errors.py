"""Exception hierarchy shared across the package."""


class AoIError(Exception):
    """Base class for all package errors."""


class InvalidChannelError(AoIError, ValueError):
    pass


class InfeasibleActionError(AoIError, ValueError):
    pass


class SpaceTooLargeError(AoIError):
    pass


class ConvergenceError(AoIError):
    pass


class NonUnichainError(AoIError):
    """The policy-induced chain has more than one closed recurrent class."""


class NoFeasiblePolicyError(AoIError):
    """The Lagrangian search never produced a policy within the energy budget."""


class InvalidBracketError(AoIError, ValueError):
    pass


class AllInfeasibleError(AoIError):
    pass


class ConfigError(AoIError, ValueError):
    pass
