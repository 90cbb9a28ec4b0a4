"""Exception hierarchy shared by every podn module."""


class PodnError(Exception):
    """Base class for all errors raised by the library."""


class ShapeError(PodnError, ValueError):
    pass


class LabelError(PodnError, ValueError):
    pass


class CalibrationError(PodnError):
    pass


class ExpansionError(PodnError):
    pass


class UnbalancedError(PodnError):
    pass


class OracleMissError(PodnError, KeyError):
    pass


class DatasetFormatError(PodnError, ValueError):
    pass


class InfeasiblePackingError(PodnError):
    pass


class TrainingDivergedError(PodnError, FloatingPointError):
    pass


class ConfigError(PodnError):
    pass


class SplitError(PodnError, ValueError):
    pass
