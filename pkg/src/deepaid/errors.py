"""Exception types shared across the package."""


class DeepAIDError(Exception):
    """Base class for all package-specific failures."""


class GraphError(DeepAIDError):
    """Malformed computation graph or invalid evaluation request."""


class NotAnomalyError(DeepAIDError):
    """An interpreter was asked to explain an input the detector scores normal."""


class DataFormatError(DeepAIDError):
    """Input file or document does not conform to the expected format."""


class SchemaMismatchError(DataFormatError):
    """Persisted document carries an unsupported schema version."""

    def __init__(self, found: int, expected: int):
        super().__init__(
            f"unsupported document schema version {found} (this build reads {expected})"
        )
        self.found = found
        self.expected = expected
