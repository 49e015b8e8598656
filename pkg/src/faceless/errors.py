"""Exception hierarchy. CLI exit codes hang off these classes."""


class FacelessError(Exception):
    exit_code = 4


class ConfigError(FacelessError, ValueError):
    exit_code = 2


class DataError(FacelessError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SplitError(DataError):
    pass


class PlanError(DataError):
    pass


class TrainingError(FacelessError, RuntimeError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class EvaluationError(FacelessError, ValueError):
    pass


class DimensionError(FacelessError, ValueError):
    exit_code = 3


class InferenceError(FacelessError, RuntimeError):
    pass


class BudgetExceeded(InferenceError):
    pass


class StageError(FacelessError):
    """Wraps a failure inside run_scenario with the pipeline stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4)
        super().__init__(f"stage '{stage}' failed: {cause}")
