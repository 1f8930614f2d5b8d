"""Exception hierarchy.

Every error raised by the package derives from :class:`BetaPressError`.
The ``category`` attribute drives CLI exit codes: ``usage`` (2),
``data`` (3) and ``numerical`` (4).
"""


class BetaPressError(Exception):
    category = "numerical"

    def details(self):
        return {}


class DomainError(BetaPressError, ValueError):
    """Argument outside the mathematical domain of a function."""


class FormulaError(BetaPressError, ValueError):
    category = "usage"


class FormulaSyntaxError(FormulaError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset

    def details(self):
        return {"offset": self.offset}


class UnknownCovariateError(FormulaError):
    def __init__(self, name, offset=None):
        super().__init__(f"unknown covariate {name!r}")
        self.name = name
        self.offset = offset

    def details(self):
        return {"name": self.name, "offset": self.offset}


class ParameterGapError(FormulaError):
    def __init__(self, prefix, missing):
        names = ", ".join(f"{prefix}{i}" for i in missing)
        super().__init__(f"parameter indices must be contiguous; missing {names}")
        self.missing = list(missing)

    def details(self):
        return {"missing": self.missing}


class EvaluationDomainError(BetaPressError, ArithmeticError):
    """A sub-expression left its domain (log of a non-positive value, ...)."""

    def __init__(self, row, expression, reason):
        super().__init__(f"row {row}: {reason} in {expression}")
        self.row = int(row)
        self.expression = expression
        self.reason = reason

    def details(self):
        return {"row": self.row, "expression": self.expression}


class InadmissibleParameterError(BetaPressError, ValueError):
    """Parameters give mu outside (0, 1) or a non-positive precision."""

    def __init__(self, row, message):
        super().__init__(f"observation {row}: {message}")
        self.row = int(row)

    def details(self):
        return {"row": self.row}


class SingularInformationError(BetaPressError, ArithmeticError):
    pass


class NoAdmissibleStartError(BetaPressError, ValueError):
    pass


class UnitLeverageError(BetaPressError, ArithmeticError):
    def __init__(self, row):
        super().__init__(f"observation {row} has unit leverage")
        self.row = int(row)

    def details(self):
        return {"row": self.row}


class NonPositiveZetaError(BetaPressError, ArithmeticError):
    def __init__(self, row, value):
        super().__init__(f"zeta is not positive at observation {row} ({value!r})")
        self.row = int(row)

    def details(self):
        return {"row": self.row}


class ZeroSSTError(BetaPressError, ArithmeticError):
    pass


class UnknownScenarioError(BetaPressError, KeyError):
    category = "usage"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DataError(BetaPressError, ValueError):
    category = "data"

    def __init__(self, message, rows=None, column=None):
        super().__init__(message)
        self.rows = list(rows) if rows is not None else None
        self.column = column

    def details(self):
        out = {}
        if self.rows is not None:
            out["rows"] = self.rows
        if self.column is not None:
            out["column"] = self.column
        return out


class ConfigError(BetaPressError, ValueError):
    category = "usage"
