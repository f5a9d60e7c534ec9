"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (e.g. eigendecomposition did not converge)."""


class CsvParseError(InvalidInputError):
    """Malformed CSV content; carries the offending location."""

    def __init__(self, path, row, column, message):
        self.path = str(path)
        self.row = row
        self.column = column
        super().__init__(f"{self.path}: row {row}, column {column}: {message}")


class DegenerateInputWarning(UserWarning):
    """Input is degenerate for the requested transformation."""
