from fastapi import APIRouter, HTTPException

from app.core.errors import StatePruningError
from app.schemas.api import SrrqrRequest, SrrqrResponse
from app.services.linalg import srrqr

router = APIRouter()


@router.post(
    "/srrqr",
    response_model=SrrqrResponse,
    response_model_by_alias=True,
    summary="Selección de columnas por SRRQR",
    description="Elige k columnas con Strong Rank-Revealing QR y devuelve la cantidad de intercambios y el rho final.",
    responses={
        422: {
            "description": "k fuera de rango o matriz con rango insuficiente",
            "content": {
                "application/json": {
                    "example": {"detail": {"message": "srrqr: k=5 fuera de rango [1, 4)", "errors": []}}
                }
            }
        },
    }
)
def srrqr_selection(request: SrrqrRequest):
    try:
        result = srrqr(request.matrix, request.k, request.f)
    except StatePruningError as exc:
        raise HTTPException(status_code=exc.http_status, detail=exc.to_detail())
    return SrrqrResponse(
        selected=result.selected,
        swaps=result.swaps,
        max_rho=result.max_rho,
        log_abs_dets=result.log_abs_dets,
    )
