from typing import Dict, List, Optional

import numpy as np
from pydantic import Field, model_validator

from app.schemas.base import BaseSchema


class HeadRankReport(BaseSchema):
    """Diagnóstico de rango de una cabeza, agregado sobre los tokens analizados."""
    layer: int = 0
    head: int
    singular_values: List[float] = Field(..., alias="singularValues")
    effective_rank: float = Field(..., alias="effectiveRank", ge=1.0)
    utilization: float = Field(..., gt=0.0)
    kappa_s: float = Field(..., alias="kappaS")
    kappa_k: float = Field(..., alias="kappaK")
    tokens_skipped: int = Field(0, alias="tokensSkipped", ge=0)
    tokens_analyzed: int = Field(0, alias="tokensAnalyzed", ge=0)


class RankReport(BaseSchema):
    skip: int = 0
    heads: List[HeadRankReport] = Field(default_factory=list)


class SpectrumResult(BaseSchema):
    """Reporte más los espectros por token (exportables a CSV)."""
    report: RankReport
    spectra: List[np.ndarray]
    utilization: List[np.ndarray]
    tokens: List[int]


class AmplificationResult(BaseSchema):
    ratio: float
    delta: float
    gamma: float
    effective_rank: float = Field(..., alias="effectiveRank")
    kappa: float


class NoiseModel(BaseSchema):
    """Ruido isotrópico gaussiano de desviación xi en dimensión d; mu = E||n|| / xi."""
    xi: float = Field(..., gt=0.0)
    dim: int = Field(..., ge=1)
    mu: Optional[float] = None

    @model_validator(mode="after")
    def check_mu(self):
        from app.services.rank_diagnostics import mu_constant

        expected = mu_constant(self.dim)
        if self.mu is None:
            self.mu = expected
        elif abs(self.mu - expected) > 1e-10 * expected:
            raise ValueError(f"mu={self.mu} no coincide con la evaluación por log-gamma ({expected})")
        return self


class CheckResult(BaseSchema):
    name: str
    trials: int = 0
    violations: int = 0
    worst_slack: float = Field(0.0, alias="worstSlack")
    passed: bool = True
    rejected: int = 0
    details: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_passed(self):
        if self.violations > 0 and self.passed:
            raise ValueError("un chequeo con violaciones no puede aprobar")
        return self


class VerifyReport(BaseSchema):
    seed: int = 0
    checks: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def summary(self) -> str:
        lines = [f"{'check':<28} {'trials':>7} {'viol':>5} {'worst slack':>13}  estado"]
        for check in self.checks:
            status = "OK" if check.passed else "FALLA"
            lines.append(
                f"{check.name:<28} {check.trials:>7} {check.violations:>5} {check.worst_slack:>13.4e}  {status}"
            )
        return "\n".join(lines)


class BenchRow(BaseSchema):
    key_dim: int = Field(..., alias="keyDim")
    value_dim: int = Field(..., alias="valueDim")
    flops_per_token: int = Field(..., alias="flopsPerToken")
    state_bytes: int = Field(..., alias="stateBytes")
    median_seconds: float = Field(..., alias="medianSeconds")
    tokens_per_second: float = Field(..., alias="tokensPerSecond")


class BenchReport(BaseSchema):
    variant: str
    tokens: int
    baseline: BenchRow
    compressed: BenchRow
    flop_ratio: float = Field(..., alias="flopRatio")
    expected_flop_ratio: float = Field(..., alias="expectedFlopRatio")
    memory_ratio: float = Field(..., alias="memoryRatio")
    speedup: float
    slower_than_baseline: bool = Field(False, alias="slowerThanBaseline")
