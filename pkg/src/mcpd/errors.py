class McpdError(Exception):
    """Base class for package errors."""


class SchemaError(McpdError, ValueError):
    """Input data violates the record or file schema."""


class ParseError(SchemaError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class TrainingError(McpdError, RuntimeError):
    """Training could not proceed or diverged."""


class ModelError(McpdError, ValueError):
    """Model parameters or dimensions are inconsistent."""
