import json
from enum import Enum
from typing import Dict, List

import numpy as np
from pydantic import Field, computed_field, field_validator, model_validator

from app.schemas.base import BaseSchema, Matrix
from app.schemas.mixer import LayerParams, Variant


class RecallTaskSpec(BaseSchema):
    """Tarea sintética de recuerdo asociativo: pares (clave, valor) seguidos de una clave de consulta."""
    vocab: int = Field(64, ge=2)
    num_pairs: int = Field(8, alias="numPairs", ge=1)
    seq_len: int = Field(33, alias="seqLen", ge=3)
    seed: int = 0

    @model_validator(mode="after")
    def check_sizes(self):
        errors = []
        if self.seq_len < 2 * self.num_pairs + 1:
            errors.append(f"seqLen={self.seq_len} < 2*numPairs+1={2 * self.num_pairs + 1}")
        if self.vocab < 2 * self.num_pairs:
            errors.append(f"vocab={self.vocab} < 2*numPairs={2 * self.num_pairs}")
        if errors:
            raise ValueError("; ".join(errors))
        return self


class RecallDataset(BaseSchema):
    tokens: np.ndarray
    query_positions: np.ndarray
    targets: np.ndarray

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    def to_jsonl(self) -> str:
        lines = []
        for row, position, target in zip(self.tokens, self.query_positions, self.targets):
            lines.append(json.dumps({
                "tokens": row.tolist(),
                "queryPosition": int(position),
                "target": int(target),
            }))
        return "\n".join(lines) + "\n"


class ToyModel(BaseSchema):
    """Modelo de juguete: embedding, capas con residuo y cabeza de lenguaje."""
    embedding: Matrix
    layers: List[LayerParams]
    lm_head: Matrix = Field(..., alias="lmHead")
    variant: Variant = Variant.DELTA

    @field_validator("layers")
    @classmethod
    def validate_layers(cls, v):
        if not v:
            raise ValueError("se requiere al menos una capa")
        return v

    @model_validator(mode="after")
    def check_shapes(self):
        vocab, model_dim = self.embedding.shape
        for index, layer in enumerate(self.layers):
            if layer.dims.model_dim != model_dim:
                raise ValueError(f"la capa {index} tiene modelDim {layer.dims.model_dim} != {model_dim}")
        if self.lm_head.shape != (model_dim, vocab):
            raise ValueError(f"lmHead {self.lm_head.shape} != {(model_dim, vocab)}")
        return self

    @property
    def vocab(self) -> int:
        return self.embedding.shape[0]

    @property
    def model_dim(self) -> int:
        return self.embedding.shape[1]

    def named_parameters(self) -> Dict[str, np.ndarray]:
        named = {"embedding": self.embedding, "lm_head": self.lm_head}
        for index, layer in enumerate(self.layers):
            named.update(layer.named_parameters(prefix=f"layers.{index}."))
        return named

    def with_parameters(self, values: Dict[str, np.ndarray]) -> "ToyModel":
        return ToyModel(
            embedding=values.get("embedding", self.embedding),
            layers=[
                layer.with_parameters(values, prefix=f"layers.{index}.")
                for index, layer in enumerate(self.layers)
            ],
            lm_head=values.get("lm_head", self.lm_head),
            variant=self.variant,
        )


class LrSchedule(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class TrainHyper(BaseSchema):
    steps: int = Field(4000, ge=0)
    lr: float = Field(0.01, ge=0.0)
    batch_size: int = Field(32, alias="batchSize", ge=1)
    schedule: LrSchedule = LrSchedule.COSINE
    warmup_steps: int = Field(100, alias="warmupSteps", ge=0)
    min_lr_ratio: float = Field(0.02, alias="minLrRatio", ge=0.0, le=1.0)
    seed: int = 0
    log_every: int = Field(100, alias="logEvery", ge=1)
    divergence_threshold: float = Field(1e6, alias="divergenceThreshold", gt=0.0)


class TrainResult(BaseSchema):
    model: ToyModel
    losses: List[float] = Field(default_factory=list)


class ComparisonReport(BaseSchema):
    """Comparación multi-semilla de estrategias de poda (precisión antes y después de RFT)."""
    ratio: float
    challenger: str = "drrqr"
    reference: str = "rand"
    seeds: List[int]
    baseline_accuracy: float = Field(..., alias="baselineAccuracy")
    accuracies: Dict[str, List[float]]
    recovered: Dict[str, List[float]] = Field(default_factory=dict)
    means: Dict[str, float]
    wins: int
    losses: int
    ties: int
    p_value: float = Field(..., alias="pValue")

    @computed_field
    @property
    def passed(self) -> bool:
        """El retador no queda por debajo de la referencia en precisión media."""
        return self.means[self.challenger] >= self.means[self.reference]
