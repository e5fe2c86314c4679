from typing import List, Optional

from pydantic import Field, model_validator

from app.core.config import settings
from app.schemas.base import BaseSchema
from app.schemas.mixer import HeadDims, Variant
from app.schemas.plan import SelectionMode, Strategy
from app.schemas.task import LrSchedule, RecallTaskSpec, TrainHyper


class RunConfig(BaseSchema):
    """
    Configuración de una corrida de la CLI (un archivo JSON, claves camelCase).

    Los valores por defecto describen el modelo de juguete de escritorio.
    """
    # Modelo
    vocab: int = Field(64, ge=2)
    model_dim: int = Field(32, alias="modelDim", ge=1)
    num_layers: int = Field(2, alias="numLayers", ge=1)
    num_heads: int = Field(2, alias="numHeads", ge=1)
    key_dim: int = Field(16, alias="keyDim", ge=1)
    value_dim: int = Field(16, alias="valueDim", ge=1)
    conv_len: int = Field(settings.CONV_LEN, alias="convLen", ge=1)
    variant: Variant = Variant.DELTA

    # Tarea
    num_pairs: int = Field(8, alias="numPairs", ge=1)
    seq_len: int = Field(33, alias="seqLen", ge=3)

    # Entrenamiento
    train_steps: int = Field(4000, alias="trainSteps", ge=0)
    lr: float = Field(0.01, ge=0.0)
    batch_size: int = Field(32, alias="batchSize", ge=1)
    schedule: LrSchedule = LrSchedule.COSINE
    warmup_steps: int = Field(100, alias="warmupSteps", ge=0)
    min_lr_ratio: float = Field(0.02, alias="minLrRatio", ge=0.0, le=1.0)
    rft_steps: int = Field(settings.RFT_STEPS, alias="rftSteps", ge=0)
    rft_lr: float = Field(settings.RFT_LR, alias="rftLr", ge=0.0)
    eval_sequences: int = Field(256, alias="evalSequences", ge=1)

    # Poda
    ratio: float = Field(0.5, ge=0.0, lt=1.0)
    strategy: Strategy = Strategy.DRRQR
    mode: SelectionMode = SelectionMode.JOINT
    f: float = Field(settings.SRRQR_TOLERANCE, ge=1.0)
    calibration_sequences: int = Field(settings.CALIBRATION_SEQUENCES, alias="calibrationSequences", ge=1)
    calibration_samples: int = Field(settings.CALIBRATION_SAMPLES, alias="calibrationSamples", ge=1)
    normalized_calibration: bool = Field(False, alias="normalizedCalibration")

    # Semillas y salidas
    seed: int = settings.DEFAULT_SEED
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    output_dir: str = Field(settings.OUTPUT_DIR, alias="outputDir")

    # Verificación, espectro y benchmark
    checks: Optional[List[str]] = None
    verify_trials: Optional[int] = Field(None, alias="verifyTrials", ge=1)
    skip: int = Field(settings.SPECTRUM_SKIP, ge=0)
    bench_tokens: int = Field(256, alias="benchTokens", ge=1)
    bench_batch: int = Field(8, alias="benchBatch", ge=1)
    bench_warmup: int = Field(3, alias="benchWarmup", ge=3)
    bench_repeats: int = Field(5, alias="benchRepeats", ge=1)

    @model_validator(mode="after")
    def check_task(self):
        # Reutiliza las invariantes de la tarea
        self.task_spec()
        return self

    def head_dims(self) -> HeadDims:
        return HeadDims(
            model_dim=self.model_dim,
            key_dim=self.key_dim,
            value_dim=self.value_dim,
            num_heads=self.num_heads,
            conv_len=self.conv_len,
        )

    def task_spec(self) -> RecallTaskSpec:
        return RecallTaskSpec(vocab=self.vocab, num_pairs=self.num_pairs, seq_len=self.seq_len, seed=self.seed)

    def train_hyper(self, steps: Optional[int] = None) -> TrainHyper:
        return TrainHyper(
            steps=self.train_steps if steps is None else steps,
            lr=self.lr,
            batch_size=self.batch_size,
            schedule=self.schedule,
            warmup_steps=self.warmup_steps,
            min_lr_ratio=self.min_lr_ratio,
            seed=self.seed,
        )

    def rft_hyper(self, seed: Optional[int] = None) -> TrainHyper:
        hyper = self.train_hyper(steps=self.rft_steps)
        return hyper.model_copy(update={"lr": self.rft_lr, "seed": self.seed if seed is None else seed})
