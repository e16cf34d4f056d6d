"""Exception hierarchy shared by every dsos module."""


class DSOSError(Exception):
    """Base class for all errors raised by this package."""


class InputError(DSOSError, ValueError):
    """Arguments have the wrong shape, length or range."""


class ConfigError(DSOSError, ValueError):
    """A configuration violates its invariants."""


class ParseError(DSOSError, ValueError):
    """A file on disk does not follow its documented format."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class TrainingError(DSOSError, RuntimeError):
    """Training produced a non-finite value."""


class DegenerateFitError(DSOSError, RuntimeError):
    """Too few values to fit a mixture; callers use the fallback rule."""


class UndefinedAUCError(DSOSError, ValueError):
    """AUC requested with only positives or only negatives."""


class ReportingError(DSOSError, ValueError):
    """A report needs information the inputs do not carry."""
