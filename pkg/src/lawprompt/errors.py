"""Exception hierarchy. The CLI maps these onto exit codes."""


class LawPromptError(Exception):
    """Base class for all package errors."""


class DataError(LawPromptError, ValueError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class NumericError(LawPromptError, ArithmeticError):
    """Non-finite values or a failed numerical check (CLI exit code 3)."""


class CheckpointError(DataError):
    """Checkpoint version, checksum or vocabulary mismatch."""


class TransportError(LawPromptError):
    """The LLM client could not obtain a response."""


class PromptTooLongError(LawPromptError, ValueError):
    pass


class StageError(LawPromptError):
    """Wraps a failure inside one pipeline stage, keeping the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
