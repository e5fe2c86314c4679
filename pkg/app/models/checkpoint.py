"""
Capa de persistencia: checkpoints (manifiesto JSON + un archivo binario f64
little-endian por tensor) y escritores de reportes JSON / CSV / JSON-lines.
"""
import csv
import json
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.errors import CheckpointError, validation_messages
from app.core.logging import get_logger
from app.schemas.mixer import HEAD_FIELDS, HeadParams, LayerParams, Variant
from app.schemas.task import ToyModel

logger = get_logger(__name__)

MANIFEST = "manifest.json"
DTYPE = "<f8"
FORMAT_VERSION = 1


def _file_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name) + ".bin"


def save_tensors(directory: Path | str, tensors: Dict[str, np.ndarray], metadata: Dict[str, Any] | None = None) -> Path:
    """
    Escribe un tensor por archivo (row-major, float64 little-endian) y el manifiesto.

    El orden del manifiesto sigue el del diccionario, así dos guardados del
    mismo contenido producen bytes idénticos.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, tensor in tensors.items():
        array = np.ascontiguousarray(tensor, dtype=DTYPE)
        file_name = _file_name(name)
        array.tofile(directory / file_name)
        entries.append({
            "name": name,
            "shape": list(array.shape),
            "dtype": "f64",
            "file": file_name,
            "byteOrder": "little",
        })
    manifest = {"version": FORMAT_VERSION, "tensors": entries, "metadata": metadata or {}}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return directory


def load_tensors(directory: Path | str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Lee un checkpoint y valida el tamaño de cada archivo (8 * prod(shape) bytes).

    Raises:
        CheckpointError: si falta el manifiesto, un archivo o el tamaño no coincide
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise CheckpointError(f"no existe el manifiesto {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"manifiesto inválido en {manifest_path}", errors=[str(exc)]) from exc

    tensors: Dict[str, np.ndarray] = {}
    for entry in manifest.get("tensors", []):
        path = directory / entry["file"]
        if entry.get("dtype") != "f64" or entry.get("byteOrder") != "little":
            raise CheckpointError(f"{entry['name']}: solo se admite f64 little-endian")
        if not path.is_file():
            raise CheckpointError(f"falta el archivo {path}")
        shape = tuple(entry["shape"])
        expected = 8 * int(np.prod(shape, dtype=np.int64))
        if path.stat().st_size != expected:
            raise CheckpointError(
                f"{path}: {path.stat().st_size} bytes, se esperaban {expected}"
            )
        tensors[entry["name"]] = np.fromfile(path, dtype=DTYPE).reshape(shape).astype(np.float64)
    return tensors, manifest.get("metadata", {})


def save_model(directory: Path | str, model: ToyModel, extra: Dict[str, Any] | None = None) -> Path:
    metadata = {
        "kind": "toy-model",
        "variant": model.variant.value,
        "numLayers": len(model.layers),
        "numHeads": [len(layer.heads) for layer in model.layers],
        "rmsEps": [layer.rms_eps for layer in model.layers],
        **(extra or {}),
    }
    path = save_tensors(directory, model.named_parameters(), metadata)
    logger.info("✅ Checkpoint guardado en %s", path)
    return path


def load_model(directory: Path | str) -> ToyModel:
    """
    Reconstruye un ToyModel a partir de los nombres del manifiesto.

    Raises:
        CheckpointError: si faltan tensores o las formas son inconsistentes
    """
    tensors, metadata = load_tensors(directory)
    if metadata.get("kind") != "toy-model":
        raise CheckpointError(f"{directory} no contiene un modelo de juguete")
    try:
        layers = []
        for index in range(int(metadata["numLayers"])):
            prefix = f"layers.{index}."
            heads = [
                HeadParams(**{name: tensors[f"{prefix}heads.{head}.{name}"] for name in HEAD_FIELDS})
                for head in range(int(metadata["numHeads"][index]))
            ]
            layers.append(LayerParams(
                heads=heads,
                w_o=tensors[f"{prefix}w_o"],
                rms_eps=float(metadata["rmsEps"][index]),
            ))
        return ToyModel(
            embedding=tensors["embedding"],
            layers=layers,
            lm_head=tensors["lm_head"],
            variant=Variant(metadata["variant"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"falta el tensor o campo {exc} en {directory}") from exc
    except ValidationError as exc:
        raise CheckpointError(f"checkpoint inconsistente en {directory}", errors=validation_messages(exc)) from exc


def write_json(path: Path | str, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=False), encoding="utf-8")
    return path


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_text(path: Path | str, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path: Path | str) -> List[Dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))
