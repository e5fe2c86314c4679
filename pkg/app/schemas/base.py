from typing import Annotated

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, PlainSerializer, WithJsonSchema

from app.core.errors import NonFiniteError, ShapeMismatchError


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """
    Convierte a matriz densa float64 (2-D) y valida que todas las entradas sean finitas.

    Raises:
        ShapeMismatchError: si no es bidimensional
        NonFiniteError: si contiene NaN o Inf
    """
    m = np.array(value, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"{name}: se esperaba una matriz 2-D, se recibió ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name}: contiene entradas no finitas")
    return m


def as_vector(value, name: str = "vector") -> np.ndarray:
    v = np.array(value, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name}: contiene entradas no finitas")
    return v


def _to_matrix(value):
    # pydantic espera ValueError/AssertionError dentro de validadores
    try:
        return as_matrix(value)
    except (ShapeMismatchError, NonFiniteError) as exc:
        raise ValueError(exc.message) from exc


def _to_vector(value):
    try:
        return as_vector(value)
    except NonFiniteError as exc:
        raise ValueError(exc.message) from exc


Matrix = Annotated[
    np.ndarray,
    BeforeValidator(_to_matrix),
    PlainSerializer(lambda a: a.tolist(), return_type=list, when_used="json"),
    WithJsonSchema({"type": "array", "items": {"type": "array", "items": {"type": "number"}}}),
]

Vector = Annotated[
    np.ndarray,
    BeforeValidator(_to_vector),
    PlainSerializer(lambda a: a.tolist(), return_type=list, when_used="json"),
    WithJsonSchema({"type": "array", "items": {"type": "number"}}),
]


class BaseSchema(BaseModel):
    model_config = ConfigDict(populate_by_name=True, arbitrary_types_allowed=True)
