class GeodesicsError(Exception):
    pass


class InvalidFieldError(GeodesicsError, ValueError):
    """
    A field, mask or map violates its invariants (bad dimensions, non-finite
    values, a corrupt file).
    """


class GridMismatchError(GeodesicsError, ValueError):
    pass


class InvalidParameterError(GeodesicsError, ValueError):
    pass


class UnsupportedParameterError(InvalidParameterError):
    pass


class DegenerateInputError(GeodesicsError, ValueError):
    pass


class EmptyDatasetError(GeodesicsError, ValueError):
    pass


class DivergenceError(GeodesicsError):
    """
    Non-finite values appeared while integrating (``step``) or training
    (``epoch``).
    """

    def __init__(self, message, step=None, epoch=None):
        super().__init__(message)
        self.step = step
        self.epoch = epoch


class StallError(GeodesicsError):
    """
    The line search of a registration could not find a decreasing step.

    ``momentum`` holds the best iterate reached and ``report`` the
    registration report up to the stall.
    """

    def __init__(self, message, momentum=None, report=None):
        super().__init__(message)
        self.momentum = momentum
        self.report = report


class CalibrationError(GeodesicsError):
    pass


class PairwiseError(GeodesicsError):
    """
    Registering or predicting one follow-up of a longitudinal series failed.
    """

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class StageError(GeodesicsError):

    def __init__(self, message, stage):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        return "Stage {0!r} failed: {1}".format(self.stage, self.args[0])
