class Seq4Error(Exception):
    """Base class for package errors."""


class DimensionError(Seq4Error, ValueError):
    pass


class ContractError(Seq4Error, ValueError):
    """A precondition of an operation was violated."""


class DomainError(Seq4Error, ValueError):
    pass


class OracleError(Seq4Error):
    """A test oracle cannot be trusted (e.g. the checked function is random)."""


class NumericalError(Seq4Error, ArithmeticError):
    pass


class ParseError(Seq4Error, ValueError):
    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        elif lineno is not None:
            where = f"line {lineno}: "
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno
