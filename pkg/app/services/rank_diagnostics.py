"""
Diagnósticos de rango de la memoria asociativa: rango efectivo, utilización,
espectros por token y razón de amplificación del ruido.
"""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.constants.pruning import TOL_MATRIZ_CERO
from app.core.errors import DegenerateInputError, EmptySpectrumError, OutOfRangeError, ZeroMatrixError
from app.core.logging import get_logger
from app.schemas.base import as_matrix, as_vector
from app.schemas.mixer import LayerParams, Variant
from app.schemas.report import AmplificationResult, HeadRankReport, RankReport, SpectrumResult
from app.services.linalg import condition_number, svd_jacobi, svd_values
from app.services.mixers import layer_forward

logger = get_logger(__name__)


def _require_nonzero(s: np.ndarray, name: str) -> None:
    if np.linalg.norm(s) < TOL_MATRIZ_CERO:
        raise ZeroMatrixError(f"{name}: matriz numéricamente nula (||S||_F < {TOL_MATRIZ_CERO})")


def effective_rank_from_values(sigma: np.ndarray) -> float:
    return float(np.sum(sigma * sigma) / (sigma[0] * sigma[0]))


def effective_rank(s) -> float:
    """
    Rango efectivo er(S) = ||S||_F^2 / ||S||_2^2 = sum sigma_i^2 / sigma_1^2.

    Raises:
        ZeroMatrixError: si ||S||_F < 1e-14
    """
    s = as_matrix(s, "s")
    _require_nonzero(s, "effective_rank")
    return effective_rank_from_values(svd_values(s))


def rank_utilization(s, key_dim: int, value_dim: int) -> float:
    """u(S) = er(S) / min(d_k, d_v)."""
    return effective_rank(s) / min(key_dim, value_dim)


def mu_constant(d: int) -> float:
    """mu(d) = sqrt(2) * Gamma((d+1)/2) / Gamma(d/2), evaluado con log-gamma."""
    if d < 1:
        raise OutOfRangeError(f"mu_constant: d={d} debe ser >= 1")
    return math.sqrt(2.0) * math.exp(math.lgamma((d + 1) / 2.0) - math.lgamma(d / 2.0))


def amplification_ratio(s, q_star, n) -> AmplificationResult:
    """
    Razón de amplificación R = (||S n|| / ||n||) * (||q*|| / ||S q*||).

    También devuelve delta = |n^T w1| / ||n|| y gamma = |q*^T w1| / ||q*||,
    con w1 el vector singular derecho principal de S.

    Raises:
        ZeroMatrixError: si S es nula
        DegenerateInputError: si q*, n o S q* son nulos
    """
    s = as_matrix(s, "s")
    q_star = as_vector(q_star, "q_star")
    n = as_vector(n, "n")
    _require_nonzero(s, "amplification_ratio")
    if q_star.shape[0] != s.shape[1] or n.shape[0] != s.shape[1]:
        raise DegenerateInputError("amplification_ratio: q* y n deben tener dimensión d_k")
    norm_q = np.linalg.norm(q_star)
    norm_n = np.linalg.norm(n)
    if norm_q == 0.0 or norm_n == 0.0:
        raise DegenerateInputError("amplification_ratio: q* y n deben ser no nulos")

    _, sigma, vt = svd_jacobi(s)
    response = np.linalg.norm(s @ q_star)
    if response <= TOL_MATRIZ_CERO * sigma[0] * norm_q:
        raise DegenerateInputError("amplification_ratio: S q* es nulo")

    w1 = vt[0]
    ratio = (np.linalg.norm(s @ n) / norm_n) * (norm_q / response)
    kappa = float("inf") if sigma[-1] < 1e-14 * sigma[0] else float(sigma[0] / sigma[-1])
    return AmplificationResult(
        ratio=float(ratio),
        delta=float(abs(n @ w1) / norm_n),
        gamma=float(abs(q_star @ w1) / norm_q),
        effective_rank=effective_rank_from_values(sigma),
        kappa=kappa,
    )


def spectrum_from_states(
    states: Sequence[np.ndarray],
    key_dim: int,
    value_dim: int,
    skip: int = 0,
    keys: Optional[Sequence[np.ndarray]] = None,
    layer: int = 0,
) -> SpectrumResult:
    """
    Agrega espectros de estados por token (uno por cabeza, forma T x d_v x d_k).

    Los estados numéricamente nulos se cuentan en tokensSkipped y no aportan
    al rango efectivo medio.

    Raises:
        OutOfRangeError: si skip >= T
        EmptySpectrumError: si ninguna cabeza tiene un estado no nulo
    """
    steps = states[0].shape[0]
    if not 0 <= skip < steps:
        raise OutOfRangeError(f"skip={skip} debe estar en [0, T={steps})")
    width = min(key_dim, value_dim)
    tokens = list(range(skip, steps))
    heads: List[HeadRankReport] = []
    spectra: List[np.ndarray] = []
    utilization: List[np.ndarray] = []

    for index, head_states in enumerate(states):
        sigma_rows = np.zeros((len(tokens), width))
        util_row = np.full(len(tokens), np.nan)
        ranks = []
        skipped = 0
        for row, t in enumerate(tokens):
            s_t = head_states[t]
            if np.linalg.norm(s_t) < TOL_MATRIZ_CERO:
                skipped += 1
                continue
            sigma = svd_values(s_t)
            sigma_rows[row, : sigma.shape[0]] = sigma
            er = effective_rank_from_values(sigma)
            ranks.append(er)
            util_row[row] = er / width
        spectra.append(sigma_rows)
        utilization.append(util_row)
        if not ranks:
            continue

        final = head_states[-1]
        kappa_s = condition_number(final) if np.linalg.norm(final) >= TOL_MATRIZ_CERO else float("inf")
        kappa_k = float("inf")
        if keys is not None:
            analysed = keys[index][skip:]
            if np.linalg.norm(analysed) >= TOL_MATRIZ_CERO:
                kappa_k = condition_number(analysed)
        pooled = np.sort(sigma_rows[~np.isnan(util_row)].reshape(-1))[::-1]
        mean_er = float(np.mean(ranks))
        heads.append(HeadRankReport(
            layer=layer,
            head=index,
            singular_values=pooled.tolist(),
            effective_rank=mean_er,
            utilization=mean_er / width,
            kappa_s=kappa_s,
            kappa_k=kappa_k,
            tokens_skipped=skipped,
            tokens_analyzed=len(tokens) - skipped,
        ))

    if not heads:
        raise EmptySpectrumError(f"todos los estados analizados (t >= {skip}) son nulos")
    return SpectrumResult(
        report=RankReport(skip=skip, heads=heads),
        spectra=spectra,
        utilization=utilization,
        tokens=tokens,
    )


def spectrum_over_tokens(
    params: LayerParams,
    batch,
    variant: Variant | str,
    skip: int = 0,
    layer: int = 0,
) -> SpectrumResult:
    """
    Ejecuta layer_forward sobre una secuencia capturando S_t y agrega espectros
    desde el token `skip` en adelante.
    """
    output = layer_forward(params, batch, variant, capture_states=True)
    if output.outputs.ndim != 2:
        raise OutOfRangeError("spectrum_over_tokens: se espera una sola secuencia (T x h)")
    steps = output.outputs.shape[0]
    if not 0 <= skip < steps:
        raise OutOfRangeError(f"skip={skip} debe estar en [0, T={steps})")
    dims = params.dims
    result = spectrum_from_states(
        [head.states for head in output.heads],
        dims.key_dim,
        dims.value_dim,
        skip=skip,
        keys=[head.k for head in output.heads],
        layer=layer,
    )
    logger.info(
        "✅ Espectro de la capa %d: %d cabezas, %d tokens analizados",
        layer, len(result.report.heads), len(result.tokens),
    )
    return result


def spectrum_rows(result: SpectrumResult) -> List[Tuple[int, int, int, float]]:
    """Filas CSV head,token,sigma_index,sigma_value."""
    rows = []
    for head, sigma_rows in enumerate(result.spectra):
        for row, token in enumerate(result.tokens):
            for index, value in enumerate(sigma_rows[row]):
                rows.append((head, token, index, float(value)))
    return rows


def utilization_rows(result: SpectrumResult) -> List[Tuple[int, int, float]]:
    """Filas CSV head,token,utilization (solo tokens con estado no nulo)."""
    rows = []
    for head, values in enumerate(result.utilization):
        for row, token in enumerate(result.tokens):
            if not np.isnan(values[row]):
                rows.append((head, token, float(values[row])))
    return rows
