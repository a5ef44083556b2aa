class DomainError(ValueError):
    """An input lies outside the admissible state or parameter domain."""


class ConstraintError(ValueError):
    """Potential parameters violate the feasibility box."""


class TrainingError(RuntimeError):
    """Network training diverged."""

    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
