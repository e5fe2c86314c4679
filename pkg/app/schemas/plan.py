from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import Field, computed_field, field_validator, model_validator

from app.schemas.base import BaseSchema, Matrix, Vector


class Strategy(str, Enum):
    RAND = "rand"
    L1 = "l1"
    SWANDA = "swanda"
    GRAD = "grad"
    DRRQR = "drrqr"
    PCA = "pca"
    PCA_ADVERSARIAL = "pca-adversarial"

    @property
    def is_pca(self) -> bool:
        return self in (Strategy.PCA, Strategy.PCA_ADVERSARIAL)


class SelectionMode(str, Enum):
    JOINT = "joint"
    KEYS = "keys"
    QUERIES = "queries"


class PcaTransform(BaseSchema):
    """
    Proyección PCA T (d_k' x d_k) con filas ortonormales.

    `basis` guarda la base ortogonal completa (d_k x d_k) ordenada por varianza,
    necesaria para adaptar los filtros de convolución antes de recortar.
    """
    t: Matrix
    basis: Matrix
    adversarial: bool = False
    explained_variance_ratio: float = Field(0.0, alias="explainedVarianceRatio", ge=0.0)

    @model_validator(mode="after")
    def check_orthonormal(self):
        rows = self.t.shape[0]
        if np.max(np.abs(self.t @ self.t.T - np.eye(rows))) > 1e-10:
            raise ValueError("las filas de T no son ortonormales")
        if self.basis.shape != (self.t.shape[1], self.t.shape[1]):
            raise ValueError("basis debe ser d_k x d_k")
        return self


class HeadPlan(BaseSchema):
    """Canales retenidos de una cabeza; `transform` solo existe en planes PCA."""
    retained: List[int]
    key_dim: int = Field(..., alias="keyDim", ge=1)
    strategy: Strategy
    mode: SelectionMode = SelectionMode.JOINT
    transform: Optional[PcaTransform] = None

    @field_validator("retained")
    @classmethod
    def validate_retained(cls, v):
        if not v:
            raise ValueError("se debe retener al menos un canal")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("los índices retenidos deben ser estrictamente crecientes")
        return v

    @model_validator(mode="after")
    def check_range(self):
        if self.retained[0] < 0 or self.retained[-1] >= self.key_dim:
            raise ValueError(f"índices fuera de rango [0, {self.key_dim})")
        if self.transform is not None and self.transform.t.shape != (len(self.retained), self.key_dim):
            raise ValueError("la transformación PCA no coincide con el ancho retenido")
        return self

    @computed_field(alias="targetWidth")
    @property
    def target_width(self) -> int:
        return len(self.retained)


class LayerPlan(BaseSchema):
    heads: List[HeadPlan]


class PruningPlan(BaseSchema):
    layers: List[LayerPlan]
    ratio: float = Field(0.0, ge=0.0, lt=1.0)
    hardware_aligned: bool = Field(True, alias="hardwareAligned")

    def is_identity(self) -> bool:
        return all(
            head.transform is None and head.target_width == head.key_dim
            for layer in self.layers
            for head in layer.heads
        )


class HeadCalibration(BaseSchema):
    """Activaciones capturadas de una cabeza (submuestra de tokens)."""
    captured_k: Matrix = Field(..., alias="capturedK")
    captured_q: Matrix = Field(..., alias="capturedQ")
    input_column_norms: Vector = Field(..., alias="inputColumnNorms")

    @model_validator(mode="after")
    def check_shapes(self):
        if self.captured_k.shape != self.captured_q.shape:
            raise ValueError("capturedK y capturedQ deben tener la misma forma")
        return self


class CalibrationStats(BaseSchema):
    heads: List[HeadCalibration]
    max_samples: int = Field(..., alias="maxSamples", ge=1)
    normalized: bool = False
