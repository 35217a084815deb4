from pathlib import Path
from typing import Optional, Union


class CardinalRoundingError(Exception):
    """Base class for every error raised by the toolkit."""


class InfeasibleConstraintError(CardinalRoundingError):
    """A cardinality group does not sum to an integer."""

    def __init__(self, group: int, total: float):
        self.group = group
        self.total = total
        super().__init__(
            f"infeasible cardinality constraint: group {group} sums to {total!r}"
        )


class BudgetViolationError(CardinalRoundingError):
    """The fractional point already exceeds the budget."""


class NotAFlowError(CardinalRoundingError):
    """Edge values violate flow conservation."""

    def __init__(self, detail: str):
        super().__init__(f"not a flow: {detail}")


class InstanceError(CardinalRoundingError):
    """An instance or request is malformed for the requested operation."""


class ParseError(CardinalRoundingError):
    """Raised while reading instance or solution files."""

    def __init__(self, path: Union[str, Path], line: Optional[int], message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class ConfigError(CardinalRoundingError):
    """Invalid bench configuration."""
