from enum import Enum
from typing import Dict

import numpy as np
from pydantic import Field, field_validator

from app.schemas.base import BaseSchema


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    CROSS_ENTROPY = "cross_entropy"


class LossSpec(BaseSchema):
    """
    Pérdida escalar sobre la salida de la capa.

    squared_error: 0.5 * sum((Y - targets)^2)
    cross_entropy: filas de Y como logits, targets como filas de probabilidad;
    las filas de targets todas en cero no cuentan (máscara).
    """
    kind: LossKind
    targets: np.ndarray

    @field_validator("targets", mode="before")
    @classmethod
    def validate_targets(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("targets contiene entradas no finitas")
        return arr


class ParamGrads(BaseSchema):
    """Un gradiente por parámetro con nombre (mismas claves y formas que named_parameters)."""
    grads: Dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __iter__(self):
        return iter(self.grads)

    def items(self):
        return self.grads.items()

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.grads.values())


class SgdHyper(BaseSchema):
    lr: float = Field(0.01, ge=0.0)


class AdamHyper(BaseSchema):
    lr: float = Field(0.01, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


class AdamState(BaseSchema):
    step: int = 0
    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    v: Dict[str, np.ndarray] = Field(default_factory=dict)
