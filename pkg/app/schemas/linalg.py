from typing import List

from pydantic import Field, model_validator

from app.schemas.base import BaseSchema, Matrix


class QrcpResult(BaseSchema):
    """Factorización Q·R = M[:, perm] con pivoteo de columnas."""
    q: Matrix
    r: Matrix
    perm: List[int]

    @model_validator(mode="after")
    def check_shapes(self):
        if self.q.shape[1] != self.r.shape[0]:
            raise ValueError("q y r no son compatibles")
        if sorted(self.perm) != list(range(self.r.shape[1])):
            raise ValueError("perm no es una permutación de las columnas")
        return self


class SrrqrState(BaseSchema):
    r_factor: Matrix = Field(..., alias="rFactor")
    perm: List[int]
    omega: List[float]
    gamma: List[float]
    k: int
    f: float

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.omega) != self.k:
            raise ValueError("omega debe tener longitud k")
        if len(self.gamma) != len(self.perm) - self.k:
            raise ValueError("gamma debe tener longitud cols - k")
        if self.f < 1.0:
            raise ValueError("f debe ser >= 1")
        return self


class SrrqrResult(BaseSchema):
    selected: List[int]
    perm: List[int]
    swaps: int
    max_rho: float = Field(..., alias="maxRho")
    log_abs_dets: List[float] = Field(default_factory=list, alias="logAbsDets")
    state: SrrqrState
