"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation received arguments that violate its shape/value contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or infeasible."""


class ParseError(ValueError):
    """A file on disk could not be parsed.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StageError(RuntimeError):
    """A pipeline stage was run before the stage it depends on."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""
