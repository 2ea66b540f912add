"""Exception types shared across the engine."""


class OrchestraError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(OrchestraError):
    """Input could not be parsed in the declared format."""


class RaggedRowError(FormatError):
    """A delimited row has the wrong number of cells."""

    def __init__(self, row_index: int, expected: int, got: int):
        self.row_index = row_index
        self.expected = expected
        self.got = got
        super().__init__(
            f"row {row_index} has {got} cells, expected {expected}"
        )


class ParseError(OrchestraError):
    """Agent output did not match the expected tagged format."""


class EmptyAnswerError(ParseError):
    """Decision output was blank."""


class BackendError(OrchestraError):
    """Base class for chat-backend failures."""


class TransportError(BackendError):
    """Network-level failure or HTTP >= 500. Retryable."""


class TimeoutError(TransportError):  # noqa: A001 - mirrors the wire contract name
    """Request timed out. Retryable."""


class ApiError(BackendError):
    """HTTP 4xx from the endpoint. Not retryable."""


class ScriptExhaustedError(BackendError):
    """Scripted backend ran out of transcript entries."""


class ScriptMismatchError(BackendError):
    """No remaining transcript entry matches the request."""


class SandboxUnavailableError(OrchestraError):
    """The script sandbox runner is not installed or not runnable."""
