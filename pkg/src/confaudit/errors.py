"""Exception hierarchy shared by every module."""


class ConfauditError(Exception):
    """Base class for all errors raised by the package."""


class SpecificationError(ConfauditError, ValueError):
    """Invalid parameters, mismatched lengths, unknown names."""


class DegenerateColumnError(ConfauditError, ValueError):
    """A column has zero sample variance where a non-constant one is needed."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"column {column!r} is constant (zero variance)")


class DegenerateConfounderError(DegenerateColumnError):
    """The confounder has zero sample variance."""

    def __init__(self, message=None):
        super().__init__("a", message or "confounder 'a' has zero sample variance")


class CollinearityError(ConfauditError, ValueError):
    """A partial statistic is undefined because its conditioner is collinear."""


class StratificationError(ConfauditError, ValueError):
    """A label-stratified split cannot be formed."""


class EmptyResultError(ConfauditError, ValueError):
    """An adjustment left no usable samples."""


class UndefinedAUCError(ConfauditError, ValueError):
    """AUC requested on a single-class label vector."""


class DagParseError(ConfauditError, ValueError):
    """Malformed line in a plain-text DAG file."""

    def __init__(self, lineno, line, reason):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {reason}: {line.strip()!r}")
