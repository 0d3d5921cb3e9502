"""Exception types shared across the toolkit."""


class TcbmError(Exception):
    """Base class for all toolkit errors."""


# --- time-change construction / evaluation ---

class NonMonotone(TcbmError):
    pass


class NonzeroOrigin(TcbmError):
    pass


class TooManyJumps(TcbmError):
    pass


class RangeExceeded(TcbmError):
    pass


class InvalidConfig(TcbmError):
    pass


class InvalidPath(TcbmError):
    pass


class OutOfDomain(TcbmError):
    pass


class NotStrictlyIncreasing(TcbmError):
    pass


# --- Brownian path / grids ---

class UnsortedTimes(TcbmError):
    pass


class GridNotRefined(TcbmError):
    pass


class GridMissingJump(TcbmError):
    pass


# --- stochastic integration ---

class InverseMismatch(TcbmError):
    pass


class NotLambdaAdapted(TcbmError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# --- portfolio ---

class MomentGateFailed(TcbmError):
    pass


class NotH0Measurable(TcbmError):
    pass


class AxisMismatch(TcbmError):
    pass


class PEqualsOne(TcbmError):
    pass


class PNotOne(TcbmError):
    pass


class TooManyInadmissible(TcbmError):
    pass


# --- cli / experiments ---

class ConfigError(TcbmError):
    pass


class NumericalFailure(TcbmError):
    pass
