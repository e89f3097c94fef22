"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class DetAttackError(Exception):
    pass


class ValidationError(DetAttackError, ValueError):
    """Bad configuration or arguments."""


class InvalidBoxError(ValidationError):
    pass


class ResolutionMismatchError(ValidationError):
    pass


class ApplicabilityError(DetAttackError):
    """The attack or operation does not apply to this detector family."""


class TrainingError(DetAttackError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


class UndefinedMetricError(DetAttackError, ValueError):
    pass
