"""Exception types shared across the pipeline.

The CLI maps these onto exit codes (2 config, 3 numerical, 4 format).
"""


class MRFError(Exception):
    pass


class InvalidArgumentError(MRFError, ValueError):
    pass


class DegenerateSignalError(MRFError, ValueError):
    pass


class ContractViolationError(MRFError, ValueError):
    pass


class NumericalFailureError(MRFError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DegenerateTrainingError(MRFError, ValueError):
    pass


class FormatError(MRFError):
    pass


class ConfigError(MRFError):
    pass
