"""Exception hierarchy shared by every stage of the pipeline."""


class NeuralFilterError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(NeuralFilterError, ValueError):
    pass


class InvalidStateError(InvalidArgumentError):
    """State vector has the wrong length or non-finite entries."""


class DegenerateConfigurationError(NeuralFilterError):
    """Mass matrix (or similar) is numerically singular."""


class IntegrationError(NeuralFilterError):
    """ODE integration did not reach the end of the interval."""

    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class DivergenceError(IntegrationError):
    """A non-finite value appeared during integration."""


class InvalidArchitectureError(InvalidArgumentError):
    pass


class ModelFormatError(NeuralFilterError):
    """Model file could not be decoded."""


class ModelVersionError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError):
    pass


class TrainingDivergenceError(NeuralFilterError):
    """Non-finite loss or gradient. ``trace`` holds the losses up to failure."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FilterDivergenceError(NeuralFilterError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NumericalFailureError(NeuralFilterError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(NeuralFilterError):
    """Invalid or unparsable experiment configuration."""


class StageError(NeuralFilterError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class InvalidComparisonError(InvalidArgumentError):
    pass


class OutputError(NeuralFilterError):
    """An artifact could not be written; the message names the path."""
