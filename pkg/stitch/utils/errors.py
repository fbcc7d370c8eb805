# Copyright 2026 The Stitch Authors. All rights reserved.

__all__ = [
    'StitchError', 'ConfigError', 'DatasetError', 'NumericalError',
    'UnstableDynamicsError', 'NonFiniteGradientError',
    'InnovationSingularError', 'EMMonotonicityError',
    'InsufficientCoObservationError', 'LagOutOfRangeError',
    'AlignmentUnderdeterminedError', 'RankDeficientError',
    'UndefinedMetricError'
]


class StitchError(Exception):
    """Base class of every error raised by the stitch package."""


class ConfigError(StitchError, ValueError):

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ''
        if path is not None:
            where = f'{path}:{line}: ' if line is not None else f'{path}: '
        elif line is not None:
            where = f'line {line}: '
        super().__init__(where + message)


class DatasetError(StitchError, OSError):
    pass


class NumericalError(StitchError, ArithmeticError):
    pass


class UnstableDynamicsError(NumericalError):
    pass


class NonFiniteGradientError(NumericalError):

    def __init__(self, message, step=None, parameter=None):
        self.step = step
        self.parameter = parameter
        super().__init__(message)


class InnovationSingularError(NumericalError):

    def __init__(self, message, t=None):
        self.t = t
        super().__init__(message if t is None else f'{message} (t={t})')


class EMMonotonicityError(NumericalError):
    pass


class InsufficientCoObservationError(StitchError, ValueError):
    pass


class LagOutOfRangeError(StitchError, ValueError):
    pass


class AlignmentUnderdeterminedError(NumericalError):

    def __init__(self, message, sessions=None):
        self.sessions = sessions
        super().__init__(message)


class RankDeficientError(NumericalError):
    pass


class UndefinedMetricError(StitchError, ValueError):
    pass
