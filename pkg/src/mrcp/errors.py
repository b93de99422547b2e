"""Exception hierarchy.

Every error raised by the library derives from :class:`MrcpError`. The two
families map onto CLI exit codes: :class:`DataError` (3) for bad inputs or
unsatisfiable preconditions, :class:`NumericalError` (4) for divergence and
ill-conditioning.
"""


class MrcpError(Exception):
    exit_code = 1


class UsageError(MrcpError):
    exit_code = 2


class DataError(MrcpError, ValueError):
    exit_code = 3


class NumericalError(MrcpError, ArithmeticError):
    exit_code = 4


# core_data
class TooFewTrials(DataError):
    pass


# dsp
class InvalidBand(DataError):
    pass


class SignalTooShort(DataError):
    pass


class SingleChannel(DataError):
    pass


class InvalidTarget(DataError):
    pass


class UnstableDesign(NumericalError):
    pass


# epoching
class OnsetOutOfBounds(DataError):
    def __init__(self, onset, message=None):
        self.onset = onset
        super().__init__(message or f"onset at sample {onset} does not fit the epoch window")


class InsufficientRestData(DataError):
    pass


# nn
class ShapeMismatch(DataError):
    pass


class NonFiniteLoss(NumericalError):
    pass


# slda / rf
class WindowOutOfBounds(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class SingularAfterShrinkage(NumericalError):
    pass


class InvalidMtry(DataError):
    pass


# eval
class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class InvalidAlpha(DataError):
    pass


# synth
class InvalidSpec(DataError):
    pass


class DegenerateDataWarning(UserWarning):
    """All trials identical; shrinkage weight forced to 1."""
