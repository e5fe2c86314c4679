"""
Jerarquía de errores del paquete.

Cada error sabe con qué código de salida termina la CLI y con qué estado
HTTP responde la API, para que ambas superficies traduzcan igual.
"""
from typing import List, Optional

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class StatePruningError(Exception):
    exit_code: int = EXIT_NUMERIC
    http_status: int = 500

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        super().__init__(message)
        self.message = message
        self.errors = errors or []

    def to_detail(self) -> dict:
        return {"message": self.message, "errors": self.errors}


class ShapeMismatchError(StatePruningError):
    exit_code = EXIT_USAGE
    http_status = 422


class NonFiniteError(StatePruningError):
    http_status = 422


class ZeroMatrixError(StatePruningError):
    http_status = 422


class RankDeficientError(StatePruningError):
    http_status = 422


class NonConvergentError(StatePruningError):
    pass


class OutOfRangeError(StatePruningError):
    exit_code = EXIT_USAGE
    http_status = 422


class DegenerateInputError(StatePruningError):
    http_status = 422


class NotOrthogonalError(StatePruningError):
    http_status = 422


class EmptySpectrumError(StatePruningError):
    http_status = 422


class DivergenceError(StatePruningError):
    pass


class ConfigError(StatePruningError):
    exit_code = EXIT_USAGE
    http_status = 422


class CheckpointError(StatePruningError):
    exit_code = EXIT_USAGE


def validation_messages(exc) -> List[str]:
    """Convierte un pydantic.ValidationError en mensajes 'campo: mensaje'."""
    messages = []
    for error in exc.errors():
        field = ".".join(str(p) for p in error["loc"]) if error["loc"] else "unknown"
        messages.append(f"{field}: {error['msg']}")
    return messages
