"""Exception hierarchy.

``DataError`` subclasses map to CLI exit code 3, ``NumericalError`` to 4.
"""


class LariError(Exception):
    pass


class DataError(LariError):
    pass


class NumericalError(LariError):
    pass


class ParameterError(DataError, ValueError):
    pass


class ParseError(DataError):
    pass


class OutOfDomainError(DataError):
    pass


class BoundaryError(OutOfDomainError):
    pass


class DomainExitError(DataError):
    def __init__(self, step, position):
        self.step = step
        self.position = position
        super().__init__(f"simulated position {tuple(position)} left the surface domain at step {step}")


class AlignmentError(DataError):
    pass


class DesignError(DataError):
    pass


class TooShortError(DataError):
    pass


class DegenerateStepError(DataError):
    pass


class GridMismatchError(DataError):
    pass


class UnavailableTruthError(DataError):
    pass


class SingularFitError(NumericalError):
    pass


class RankError(NumericalError):
    pass


class ComponentError(NumericalError):
    pass


class UndefinedZError(NumericalError):
    pass
