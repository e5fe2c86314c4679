import math

from fastapi import APIRouter, HTTPException

from app.core.errors import StatePruningError
from app.schemas.api import RankDiagnosticsRequest, RankDiagnosticsResponse
from app.services.linalg import condition_number, svd_values
from app.services.rank_diagnostics import effective_rank

router = APIRouter()


@router.post(
    "/rank",
    response_model=RankDiagnosticsResponse,
    response_model_by_alias=True,
    summary="Diagnóstico de rango de un estado",
    description="Valores singulares, rango efectivo, utilización y número de condición de una matriz de estado d_v x d_k.",
    responses={
        422: {
            "description": "Matriz nula o con entradas no finitas",
            "content": {
                "application/json": {
                    "example": {"detail": {"message": "effective_rank: la matriz es nula", "errors": []}}
                }
            }
        },
    }
)
def rank_diagnostics(request: RankDiagnosticsRequest):
    state = request.state
    value_dim, key_dim = state.shape
    try:
        er = effective_rank(state)
        kappa = condition_number(state)
        return RankDiagnosticsResponse(
            singular_values=svd_values(state).tolist(),
            effective_rank=er,
            utilization=er / min(key_dim, value_dim),
            kappa=kappa if math.isfinite(kappa) else None,
            key_dim=key_dim,
            value_dim=value_dim,
        )
    except StatePruningError as exc:
        raise HTTPException(status_code=exc.http_status, detail=exc.to_detail())
