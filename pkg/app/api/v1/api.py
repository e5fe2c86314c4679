from fastapi import APIRouter

from app.api.v1.endpoints import base, diagnostics, linalg, verify

api_router = APIRouter()

api_router.include_router(base.router, prefix="/base", tags=["base"])
api_router.include_router(verify.router, prefix="/verify", tags=["verify"])
api_router.include_router(diagnostics.router, prefix="/diagnostics", tags=["diagnostics"])
api_router.include_router(linalg.router, prefix="/linalg", tags=["linalg"])
