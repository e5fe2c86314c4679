from fastapi import APIRouter, HTTPException

from app.core.errors import StatePruningError
from app.core.logging import get_logger
from app.schemas.api import VerifyRequest
from app.schemas.report import VerifyReport
from app.services.theory_verify import CHECKS, run_all

logger = get_logger(__name__)

router = APIRouter()


@router.get("/checks", summary="Listar verificaciones disponibles")
async def list_checks():
    return {"checks": sorted(CHECKS)}


@router.post(
    "/",
    response_model=VerifyReport,
    response_model_by_alias=True,
    summary="Ejecutar verificaciones empíricas",
    description="Corre todas las verificaciones o un subconjunto, con un presupuesto de ensayos opcional.",
    responses={
        200: {"description": "Reporte con una fila por verificación"},
        422: {
            "description": "Verificación desconocida o parámetros inválidos",
            "content": {
                "application/json": {
                    "example": {"detail": {"message": "verificaciones desconocidas", "errors": ["foo"]}}
                }
            }
        },
    }
)
def run_verification(request: VerifyRequest):
    try:
        return run_all(seed=request.seed, names=request.checks, trials=request.trials)
    except StatePruningError as exc:
        logger.error("❌ Error en verificación: %s", exc.message)
        raise HTTPException(status_code=exc.http_status, detail=exc.to_detail())
