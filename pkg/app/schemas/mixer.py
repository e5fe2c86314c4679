from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import Field, field_validator, model_validator

from app.core.config import settings
from app.schemas.base import BaseSchema, Matrix


class Variant(str, Enum):
    LINEAR = "linear"
    DELTA = "delta"
    GATED = "gated"


class HeadDims(BaseSchema):
    model_dim: int = Field(..., alias="modelDim", ge=1)
    key_dim: int = Field(..., alias="keyDim", ge=1)
    value_dim: int = Field(..., alias="valueDim", ge=1)
    num_heads: int = Field(..., alias="numHeads", ge=1)
    conv_len: int = Field(settings.CONV_LEN, alias="convLen", ge=1)


class HeadParams(BaseSchema):
    """Pesos de una cabeza. Proyecciones guardadas como (h x d) y aplicadas x -> x^T W."""
    w_q: Matrix = Field(..., alias="wQ")
    w_k: Matrix = Field(..., alias="wK")
    w_v: Matrix = Field(..., alias="wV")
    w_beta: Matrix = Field(..., alias="wBeta")
    w_alpha: Matrix = Field(..., alias="wAlpha")
    conv_q: Matrix = Field(..., alias="convQ")
    conv_k: Matrix = Field(..., alias="convK")
    conv_v: Matrix = Field(..., alias="convV")

    @model_validator(mode="after")
    def check_shapes(self):
        h, d_k = self.w_q.shape
        errors = []
        if self.w_k.shape != (h, d_k):
            errors.append(f"wK {self.w_k.shape} != {(h, d_k)}")
        if self.w_v.shape[0] != h:
            errors.append(f"wV tiene {self.w_v.shape[0]} filas, se esperaban {h}")
        if self.w_beta.shape != (h, 1):
            errors.append(f"wBeta {self.w_beta.shape} != {(h, 1)}")
        if self.w_alpha.shape != (h, 1):
            errors.append(f"wAlpha {self.w_alpha.shape} != {(h, 1)}")
        l = self.conv_q.shape[1]
        if self.conv_q.shape[0] != d_k or self.conv_k.shape != (d_k, l):
            errors.append("convQ/convK deben tener d_k filas y la misma longitud")
        if self.conv_v.shape != (self.w_v.shape[1], l):
            errors.append("convV debe tener d_v filas")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    @property
    def key_dim(self) -> int:
        return self.w_q.shape[1]

    @property
    def value_dim(self) -> int:
        return self.w_v.shape[1]


HEAD_FIELDS: List[str] = ["w_q", "w_k", "w_v", "w_beta", "w_alpha", "conv_q", "conv_k", "conv_v"]


class LayerParams(BaseSchema):
    heads: List[HeadParams]
    w_o: Matrix = Field(..., alias="wO")
    rms_eps: float = Field(settings.RMS_EPS, alias="rmsEps", gt=0.0)

    @field_validator("heads")
    @classmethod
    def validate_heads(cls, v):
        if not v:
            raise ValueError("se requiere al menos una cabeza")
        first = v[0]
        for head in v[1:]:
            if head.w_q.shape != first.w_q.shape or head.w_v.shape != first.w_v.shape:
                raise ValueError("todas las cabezas deben compartir dimensiones")
            if head.conv_q.shape[1] != first.conv_q.shape[1]:
                raise ValueError("todas las cabezas deben compartir la longitud de convolución")
        return v

    @model_validator(mode="after")
    def check_output(self):
        h = self.heads[0].w_q.shape[0]
        expected = (len(self.heads) * self.heads[0].value_dim, h)
        if self.w_o.shape != expected:
            raise ValueError(f"wO {self.w_o.shape} != {expected}")
        return self

    @property
    def dims(self) -> HeadDims:
        head = self.heads[0]
        return HeadDims(
            model_dim=head.w_q.shape[0],
            key_dim=head.key_dim,
            value_dim=head.value_dim,
            num_heads=len(self.heads),
            conv_len=head.conv_q.shape[1],
        )

    def named_parameters(self, prefix: str = "") -> Dict[str, np.ndarray]:
        named = {}
        for index, head in enumerate(self.heads):
            for name in HEAD_FIELDS:
                named[f"{prefix}heads.{index}.{name}"] = getattr(head, name)
        named[f"{prefix}w_o"] = self.w_o
        return named

    def with_parameters(self, values: Dict[str, np.ndarray], prefix: str = "") -> "LayerParams":
        heads = []
        for index, head in enumerate(self.heads):
            update = {
                name: values.get(f"{prefix}heads.{index}.{name}", getattr(head, name))
                for name in HEAD_FIELDS
            }
            heads.append(HeadParams(**update))
        return LayerParams(
            heads=heads,
            w_o=values.get(f"{prefix}w_o", self.w_o),
            rms_eps=self.rms_eps,
        )


class MixerState(BaseSchema):
    """Memoria asociativa S_t (d_v x d_k); arranca en cero."""
    s: Matrix

    @classmethod
    def zeros(cls, value_dim: int, key_dim: int) -> "MixerState":
        return cls(s=np.zeros((value_dim, key_dim)))


class SequenceBatch(BaseSchema):
    x: Matrix

    @field_validator("x")
    @classmethod
    def validate_length(cls, v):
        if v.shape[0] < 1:
            raise ValueError("T debe ser >= 1")
        return v

    @property
    def length(self) -> int:
        return self.x.shape[0]


class HeadCapture(BaseSchema):
    """Activaciones de una cabeza: crudas (post-SiLU, pre-normalización) y normalizadas."""
    q_raw: np.ndarray
    k_raw: np.ndarray
    v: np.ndarray
    q: np.ndarray
    k: np.ndarray
    beta: np.ndarray
    alpha: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None


class LayerOutput(BaseSchema):
    outputs: np.ndarray
    heads: List[HeadCapture]
    normed: np.ndarray
