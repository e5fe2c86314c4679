from typing import List, Optional

from pydantic import Field

from app.core.config import settings
from app.schemas.base import BaseSchema, Matrix


class VerifyRequest(BaseSchema):
    checks: Optional[List[str]] = None
    trials: Optional[int] = Field(None, ge=1, le=1000)
    seed: int = settings.DEFAULT_SEED


class RankDiagnosticsRequest(BaseSchema):
    """Estado S de forma d_v x d_k."""
    state: Matrix


class RankDiagnosticsResponse(BaseSchema):
    singular_values: List[float] = Field(..., alias="singularValues")
    effective_rank: float = Field(..., alias="effectiveRank")
    utilization: float
    # None cuando S es numéricamente singular (kappa infinito)
    kappa: Optional[float] = None
    key_dim: int = Field(..., alias="keyDim")
    value_dim: int = Field(..., alias="valueDim")


class SrrqrRequest(BaseSchema):
    matrix: Matrix
    k: int = Field(..., ge=1)
    f: float = Field(settings.SRRQR_TOLERANCE, ge=1.0)


class SrrqrResponse(BaseSchema):
    selected: List[int]
    swaps: int
    max_rho: float = Field(..., alias="maxRho")
    log_abs_dets: List[float] = Field(..., alias="logAbsDets")
