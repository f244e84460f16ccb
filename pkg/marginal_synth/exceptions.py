class MarginalSynthError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(MarginalSynthError):
    pass


class MarginalError(MarginalSynthError):
    pass


class PrivacyError(MarginalSynthError):
    pass


class ConsistencyError(MarginalSynthError):
    pass


class EngineeringError(MarginalSynthError):
    pass


class SynthesisError(MarginalSynthError):
    pass


class EvaluationError(MarginalSynthError):
    pass


class PipelineError(MarginalSynthError):
    """A pipeline stage failed; carries the stage name for the CLI message."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
