from dotenv import load_dotenv
from contextlib import asynccontextmanager

# Cargar variables de entorno desde .env
load_dotenv()

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from app.core.config import settings
from app.core.logging import configure_logging, get_logger
from app.api.v1.api import api_router
from app.services.theory_verify import CHECKS

logger = get_logger(__name__)


# Lifespan para inicialización y cierre
@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging(settings.LOG_LEVEL)
    logger.info("✅ %s %s iniciado (%s)", settings.PROJECT_NAME, settings.VERSION, settings.APP_ENV)
    yield
    logger.info("Servicio detenido")


app = FastAPI(
    title=settings.PROJECT_NAME,
    version=settings.VERSION,
    description=settings.DESCRIPTION,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.BACKEND_CORS_ORIGINS,
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["*"],
    expose_headers=["*"],
)

app.include_router(api_router, prefix=settings.API_V1_STR)


@app.get("/")
async def root():
    return {
        "message": f"Bienvenido a {settings.PROJECT_NAME}",
        "version": settings.VERSION,
        "features": [
            "Verificación empírica de cotas de rango y amplificación",
            "Diagnóstico de rango de estados",
            "Selección de columnas con Strong RRQR",
        ]
    }


@app.get("/health")
async def health_check():
    """
    Endpoint para verificar el estado de la aplicación
    """
    return {
        "status": "ok",
        "checks": len(CHECKS),
        "srrqrTolerance": settings.SRRQR_TOLERANCE,
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("main:app", host=settings.HOST, port=settings.PORT, reload=settings.DEBUG)
