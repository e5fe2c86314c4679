"""
Utilidades compartidas por los subcomandos: opciones comunes, carga de la
configuración JSON con sobrescritura por flags y directorio de salida.
"""
import argparse
import json
from pathlib import Path
from typing import Any, Dict

from pydantic import ValidationError

from app.constants.pruning import ESTRATEGIAS_PERMITIDAS, MODOS_PERMITIDOS
from app.core.errors import ConfigError, validation_messages
from app.core.logging import get_logger
from app.models.checkpoint import load_model
from app.schemas.config import RunConfig
from app.schemas.task import ToyModel

logger = get_logger(__name__)

# flag de la CLI -> alias del campo en RunConfig
OVERRIDES = {
    "ratio": "ratio",
    "strategy": "strategy",
    "mode": "mode",
    "f": "f",
    "seed": "seed",
    "output": "outputDir",
}


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="archivo JSON con la configuración de la corrida")
    parser.add_argument("--ratio", type=float, help="razón de compresión c en [0, 1)")
    parser.add_argument("--strategy", choices=ESTRATEGIAS_PERMITIDAS)
    parser.add_argument("--mode", choices=MODOS_PERMITIDOS)
    parser.add_argument("--f", type=float, help="tolerancia de intercambio del SRRQR (f >= 1)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output", help="directorio de salida")


def add_checkpoint_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", type=Path, required=True, help="directorio del checkpoint de entrada")


def _read_config_file(path: Path) -> Dict[str, Any]:
    if not path.is_file():
        raise ConfigError(f"no existe el archivo de configuración {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON inválido en {path}", errors=[str(exc)]) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} debe contener un objeto JSON")
    return data


def _validate(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("configuración inválida", errors=validation_messages(exc)) from exc


def load_run_config(args: argparse.Namespace, **extra: Any) -> RunConfig:
    """
    Configuración efectiva: archivo JSON (opcional) y luego los flags.

    Raises:
        ConfigError: archivo inexistente, JSON inválido o valores fuera de rango
    """
    data = _read_config_file(args.config) if args.config is not None else {}
    config = _validate(data)

    overrides = {alias: getattr(args, flag) for flag, alias in OVERRIDES.items() if getattr(args, flag, None) is not None}
    overrides.update({key: value for key, value in extra.items() if value is not None})
    if not overrides:
        return config
    merged = config.model_dump(by_alias=True)
    merged.update(overrides)
    return _validate(merged)


def output_dir(config: RunConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def load_checkpoint(args: argparse.Namespace, config: RunConfig) -> ToyModel:
    """
    Carga el modelo de --checkpoint y lo contrasta con la tarea de la configuración.

    Raises:
        ConfigError: si el vocabulario del checkpoint no coincide con `vocab`
    """
    model = load_model(args.checkpoint)
    if model.vocab != config.vocab:
        raise ConfigError(
            f"el checkpoint {args.checkpoint} tiene vocabulario {model.vocab}, la configuración pide {config.vocab}",
            errors=[f"vocab: {config.vocab} != {model.vocab}"],
        )
    return model
