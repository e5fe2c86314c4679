from typing import List
from pydantic_settings import BaseSettings
from pydantic import field_validator, ConfigDict

class Settings(BaseSettings):
    API_V1_STR: str = "/api/v1"
    PROJECT_NAME: str = "DeltaNet State Pruning"
    VERSION: str = "0.3.1"
    DESCRIPTION: str = "Mezcladores DeltaNet, poda estructurada del estado y verificación empírica de cotas de rango"

    # Application Configuration
    APP_ENV: str = "development"
    DEBUG: bool = True
    LOG_LEVEL: str = "INFO"

    # Server Configuration
    HOST: str = "0.0.0.0"
    PORT: int = 8000

    # Salidas de la CLI (checkpoints, reportes, CSV)
    OUTPUT_DIR: str = "runs"
    DEFAULT_SEED: int = 0

    # Numérica
    SRRQR_TOLERANCE: float = 2.0
    CONV_LEN: int = 4
    L2_EPS: float = 1e-8
    RMS_EPS: float = 1e-6

    # Calibración y ajuste de recuperación
    CALIBRATION_SAMPLES: int = 512
    CALIBRATION_SEQUENCES: int = 32
    RFT_STEPS: int = 500
    RFT_LR: float = 0.002
    SPECTRUM_SKIP: int = 0

    # CORS
    BACKEND_CORS_ORIGINS: List[str] = [
        "http://localhost:3000",
        "http://localhost:8000",
        "http://127.0.0.1:3000",
        "http://127.0.0.1:8000",
        "*"  # Permitir todos los orígenes en desarrollo
    ]

    @field_validator("BACKEND_CORS_ORIGINS", mode="before")
    @classmethod
    def assemble_cors_origins(cls, v: str | List[str]) -> List[str]:
        if isinstance(v, str) and not v.startswith("["):
            return [i.strip() for i in v.split(",")]
        elif isinstance(v, (list, str)):
            return v
        raise ValueError(v)

    @field_validator("SRRQR_TOLERANCE")
    @classmethod
    def check_tolerance(cls, v: float) -> float:
        if v < 1.0:
            raise ValueError("SRRQR_TOLERANCE debe ser >= 1")
        return v

    model_config = ConfigDict(case_sensitive=True, env_file=".env", extra="ignore")

settings = Settings()
