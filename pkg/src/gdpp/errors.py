"""Exception hierarchy shared by the solver modules and the CLI."""


class GdppError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GdppError, ValueError):
    """An argument violates a documented shape or value contract."""


class PreconditionError(GdppError, ValueError):
    """A mathematical precondition (ordering, definiteness) does not hold."""


class ConfigurationError(GdppError):
    """A solver configuration is unusable (CFL, contraction, bad config file).

    ``code`` is a short stable diagnostic identifier, used by the CLI.
    """

    def __init__(self, message, code="CFG000"):
        super().__init__(message)
        self.code = code

    def __str__(self):
        return f"[{self.code}] {super().__str__()}"


class ParseError(GdppError, ValueError):
    """Syntax or name error in a coefficient expression.

    ``kind`` is one of ``"syntax"``, ``"name"`` (unknown variable or
    function), ``"arity"`` or ``"size"``.
    """

    def __init__(self, message, position, expected=(), kind="syntax"):
        self.position = position
        self.kind = kind
        self.expected = tuple(expected)
        detail = f"{message} at offset {position}"
        if self.expected:
            detail += f" (expected {', '.join(self.expected)})"
        super().__init__(detail)


class EvaluationError(GdppError, ArithmeticError):
    """Expression evaluation produced an undefined or non-finite value."""
