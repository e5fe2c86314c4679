"""
Reducción estructurada del estado: selección de canales de claves/consultas
alineada a ejes (rand, l1, swanda, grad, drrqr), variantes PCA con adaptación
de filtros y aplicación del plan sobre los pesos.
"""
import math
from typing import List, Mapping, Optional, Sequence

import numpy as np

from app.constants.pruning import TOL_AUTOVALOR_PCA
from app.core.config import settings
from app.core.errors import (
    ConfigError,
    DegenerateInputError,
    NotOrthogonalError,
    OutOfRangeError,
    ShapeMismatchError,
)
from app.core.logging import get_logger
from app.schemas.base import as_matrix, as_vector
from app.schemas.grad import LossSpec, ParamGrads
from app.schemas.mixer import HeadParams, LayerParams, Variant
from app.schemas.plan import (
    CalibrationStats,
    HeadCalibration,
    HeadPlan,
    LayerPlan,
    PcaTransform,
    PruningPlan,
    SelectionMode,
    Strategy,
)
from app.schemas.task import ToyModel
from app.services.grad_engine import layer_backward
from app.services.linalg import srrqr_select
from app.services.mixers import causal_conv, layer_forward

logger = get_logger(__name__)


# ---------------------------------------------------------------------------
# Ancho retenido y proyecciones alineadas a ejes
# ---------------------------------------------------------------------------

def retained_width(key_dim: int, ratio: float) -> int:
    """d_k' = max(1, d_k - round(c * d_k)), con redondeo de medios hacia arriba."""
    if not 0.0 <= ratio < 1.0:
        raise OutOfRangeError(f"ratio={ratio} fuera de [0, 1)")
    removed = int(math.floor(ratio * key_dim + 0.5))
    return max(1, key_dim - removed)


def selection_matrix(retained: Sequence[int], key_dim: int) -> np.ndarray:
    """P_I (d_k' x d_k): filas de la base canónica."""
    p = np.zeros((len(retained), key_dim))
    p[np.arange(len(retained)), list(retained)] = 1.0
    return p


def top_k_indices(scores, k: int) -> List[int]:
    """Top-k por puntaje; los empates favorecen el índice más bajo. Devuelve índices ordenados."""
    scores = as_vector(scores, "scores")
    if not 1 <= k <= scores.shape[0]:
        raise OutOfRangeError(f"k={k} fuera de [1, {scores.shape[0]}]")
    order = np.argsort(-scores, kind="stable")[:k]
    return sorted(int(i) for i in order)


# ---------------------------------------------------------------------------
# Puntajes
# ---------------------------------------------------------------------------

def _mode_terms(mode: SelectionMode):
    mode = SelectionMode(mode)
    return mode in (SelectionMode.JOINT, SelectionMode.QUERIES), mode in (SelectionMode.JOINT, SelectionMode.KEYS)


def score_l1(w_q, w_k, mode: SelectionMode | str = SelectionMode.JOINT) -> np.ndarray:
    """s_j = ||W_Q[:, j]||_1 + ||W_K[:, j]||_1 (según el modo se omite un término)."""
    w_q = as_matrix(w_q, "w_q")
    w_k = as_matrix(w_k, "w_k")
    if w_q.shape[1] != w_k.shape[1]:
        raise ShapeMismatchError("score_l1: W_Q y W_K deben tener las mismas columnas")
    use_q, use_k = _mode_terms(mode)
    scores = np.zeros(w_q.shape[1])
    if use_q:
        scores += np.sum(np.abs(w_q), axis=0)
    if use_k:
        scores += np.sum(np.abs(w_k), axis=0)
    return scores


def score_swanda(w_q, w_k, input_norms, mode: SelectionMode | str = SelectionMode.JOINT) -> np.ndarray:
    """s_j = sum_i (|W_Q[i, j]| + |W_K[i, j]|) * ||X[:, i]||_2."""
    w_q = as_matrix(w_q, "w_q")
    w_k = as_matrix(w_k, "w_k")
    norms = as_vector(input_norms, "input_norms")
    if norms.shape[0] != w_q.shape[0]:
        raise ShapeMismatchError(f"score_swanda: se esperaban {w_q.shape[0]} normas de entrada")
    use_q, use_k = _mode_terms(mode)
    scores = np.zeros(w_q.shape[1])
    if use_q:
        scores += norms @ np.abs(w_q)
    if use_k:
        scores += norms @ np.abs(w_k)
    return scores


def grad_scores_from(params: LayerParams, grads: ParamGrads | Mapping[str, np.ndarray], prefix: str = "", mode: SelectionMode | str = SelectionMode.JOINT) -> List[np.ndarray]:
    """s_j = sum_i |W_Q[i, j] * dL/dW_Q[i, j]| + |W_K[i, j] * dL/dW_K[i, j]| para cada cabeza."""
    use_q, use_k = _mode_terms(mode)
    scores = []
    for index, head in enumerate(params.heads):
        head_scores = np.zeros(head.key_dim)
        if use_q:
            head_scores += np.sum(np.abs(head.w_q * grads[f"{prefix}heads.{index}.w_q"]), axis=0)
        if use_k:
            head_scores += np.sum(np.abs(head.w_k * grads[f"{prefix}heads.{index}.w_k"]), axis=0)
        scores.append(head_scores)
    return scores


def score_grad(
    params: LayerParams,
    batch,
    loss: LossSpec,
    variant: Variant | str = Variant.DELTA,
    mode: SelectionMode | str = SelectionMode.JOINT,
) -> List[np.ndarray]:
    """Puntajes de Taylor de primer orden sobre el lote de calibración (uno por cabeza)."""
    _, grads = layer_backward(params, batch, loss, variant)
    return grad_scores_from(params, grads, mode=mode)


# ---------------------------------------------------------------------------
# Calibración
# ---------------------------------------------------------------------------

def collect_calibration(
    params: LayerParams,
    inputs,
    variant: Variant | str,
    max_samples: int | None = None,
    seed: int = 0,
    normalized: bool = False,
) -> CalibrationStats:
    """
    Captura claves y consultas (post-SiLU, pre-normalización por defecto) y
    submuestra hasta max_samples tokens por cabeza.
    """
    max_samples = settings.CALIBRATION_SAMPLES if max_samples is None else max_samples
    output = layer_forward(params, inputs, variant)
    x = inputs.x if hasattr(inputs, "x") else np.asarray(inputs, dtype=np.float64)
    norms = np.linalg.norm(x.reshape(-1, x.shape[-1]), axis=0)
    rng = np.random.default_rng(seed)

    heads = []
    for head in output.heads:
        keys = head.k if normalized else head.k_raw
        queries = head.q if normalized else head.q_raw
        keys = keys.reshape(-1, keys.shape[-1])
        queries = queries.reshape(-1, queries.shape[-1])
        total = keys.shape[0]
        if total > max_samples:
            rows = np.sort(rng.choice(total, size=max_samples, replace=False))
            keys, queries = keys[rows], queries[rows]
        heads.append(HeadCalibration(captured_k=keys, captured_q=queries, input_column_norms=norms))
    return CalibrationStats(heads=heads, max_samples=max_samples, normalized=normalized)


def calibration_matrix(stats: HeadCalibration, mode: SelectionMode | str = SelectionMode.JOINT) -> np.ndarray:
    """M = [K; Q] en modo conjunto, K o Q en los otros modos."""
    mode = SelectionMode(mode)
    if mode == SelectionMode.KEYS:
        return stats.captured_k
    if mode == SelectionMode.QUERIES:
        return stats.captured_q
    return np.vstack([stats.captured_k, stats.captured_q])


# ---------------------------------------------------------------------------
# DRRQR y PCA
# ---------------------------------------------------------------------------

def select_drrqr(stats: HeadCalibration, width: int, f: float | None = None, mode: SelectionMode | str = SelectionMode.JOINT) -> List[int]:
    """
    Canales bien condicionados vía Strong RRQR sobre M.

    Raises:
        RankDeficientError: si M no tiene d_k' columnas independientes
    """
    m = calibration_matrix(stats, mode)
    if width == m.shape[1]:
        return list(range(width))
    return sorted(srrqr_select(m, width, f))


def pca_transform(
    stats: HeadCalibration,
    width: int,
    adversarial: bool = False,
    mode: SelectionMode | str = SelectionMode.JOINT,
) -> PcaTransform:
    """
    Covarianza empírica (1/N) sum m m^T sobre las filas de M y sus autovectores.

    Se retienen las d_k' direcciones de mayor varianza (o de menor, si adversarial).
    Autovalores por debajo de 1e-12 * lambda_max se tratan como cero.
    """
    m = calibration_matrix(stats, mode)
    samples, key_dim = m.shape
    if samples < key_dim:
        raise DegenerateInputError(f"pca_transform: N={samples} < d_k={key_dim}")
    if not 1 <= width <= key_dim:
        raise OutOfRangeError(f"pca_transform: d_k'={width} fuera de [1, {key_dim}]")

    covariance = m.T @ m / samples
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    top = max(float(eigenvalues[-1]), 0.0)
    eigenvalues = np.where(eigenvalues < TOL_AUTOVALOR_PCA * top, 0.0, eigenvalues)
    order = np.arange(key_dim) if adversarial else np.arange(key_dim)[::-1]
    basis = eigenvectors[:, order].T
    total = float(np.sum(eigenvalues))
    explained = float(np.sum(eigenvalues[order][:width]) / total) if total > 0.0 else 0.0
    return PcaTransform(
        t=basis[:width].copy(),
        basis=basis,
        adversarial=adversarial,
        explained_variance_ratio=explained,
    )


def _check_orthogonal(t: np.ndarray) -> None:
    if t.shape[0] != t.shape[1] or np.max(np.abs(t @ t.T - np.eye(t.shape[0]))) > 1e-10:
        raise NotOrthogonalError("la transformación no es ortogonal (tolerancia 1e-10)")


def adapt_conv_filters(t, w) -> np.ndarray:
    """
    Adaptación diagonal óptima de filtros depthwise: W' = (T ⊙ T) W.

    Raises:
        NotOrthogonalError: si T no es ortogonal
    """
    t = as_matrix(t, "t")
    w = as_matrix(w, "w")
    _check_orthogonal(t)
    if w.shape[0] != t.shape[1]:
        raise ShapeMismatchError("adapt_conv_filters: W debe tener d filas")
    return (t * t) @ w


def diagonal_adaptation_error(t, w, w_prime) -> float:
    """
    Error esperado de reemplazar T diag(w_j) T^T por diag(w'_j) en cada retardo j,
    con entrada blanca de varianza unitaria: sum_j ||T diag(w_j) T^T - diag(w'_j)||_F^2.
    """
    t = as_matrix(t, "t")
    w = as_matrix(w, "w")
    w_prime = as_matrix(w_prime, "w_prime")
    error = 0.0
    for lag in range(w.shape[1]):
        mixed = t @ np.diag(w[:, lag]) @ t.T
        diagonal = np.diag(mixed)
        off_diagonal = float(np.sum(mixed * mixed) - np.sum(diagonal * diagonal))
        error += float(np.sum((w_prime[:, lag] - diagonal) ** 2)) + off_diagonal
    return error


def shared_conv_commute_check(w, t, x) -> bool:
    """
    Comprueba W * (T x) == T (W * x) token a token, tolerancia 1e-12 relativa a la escala.

    Solo se cumple en general cuando todas las filas de W son iguales.
    """
    w = as_matrix(w, "w")
    t = as_matrix(t, "t")
    x = as_matrix(x, "x")
    transformed_first = causal_conv(x @ t.T, w)
    conv_first = causal_conv(x, w) @ t.T
    scale = max(1.0, float(np.max(np.abs(conv_first))))
    return bool(np.max(np.abs(transformed_first - conv_first)) <= 1e-12 * scale)


# ---------------------------------------------------------------------------
# Selección
# ---------------------------------------------------------------------------

def _select_head(
    strategy: Strategy,
    mode: SelectionMode,
    width: int,
    layer_index: int,
    head_index: int,
    head: HeadParams,
    calibration: Optional[HeadCalibration],
    grad_scores: Optional[np.ndarray],
    seed: int,
    f: Optional[float],
) -> HeadPlan:
    key_dim = head.key_dim
    base = dict(key_dim=key_dim, strategy=strategy, mode=mode)
    if width == key_dim:
        return HeadPlan(retained=list(range(key_dim)), **base)

    needs_stats = strategy in (Strategy.DRRQR, Strategy.SWANDA) or strategy.is_pca
    if needs_stats and calibration is None:
        raise ConfigError(f"la estrategia '{strategy.value}' requiere estadísticas de calibración")
    if strategy == Strategy.GRAD and grad_scores is None:
        raise ConfigError("la estrategia 'grad' requiere puntajes de gradiente")

    if strategy == Strategy.RAND:
        rng = np.random.default_rng([seed, layer_index, head_index])
        retained = sorted(int(i) for i in rng.choice(key_dim, size=width, replace=False))
    elif strategy == Strategy.L1:
        retained = top_k_indices(score_l1(head.w_q, head.w_k, mode), width)
    elif strategy == Strategy.SWANDA:
        scores = score_swanda(head.w_q, head.w_k, calibration.input_column_norms, mode)
        retained = top_k_indices(scores, width)
    elif strategy == Strategy.GRAD:
        retained = top_k_indices(grad_scores, width)
    elif strategy == Strategy.DRRQR:
        retained = select_drrqr(calibration, width, f, mode)
    else:
        transform = pca_transform(calibration, width, strategy == Strategy.PCA_ADVERSARIAL, mode)
        return HeadPlan(retained=list(range(width)), transform=transform, **base)
    return HeadPlan(retained=retained, **base)


def select(
    strategy: Strategy | str,
    mode: SelectionMode | str,
    ratio: float,
    layers: LayerParams | Sequence[LayerParams],
    calibration: Optional[Sequence[CalibrationStats]] = None,
    grad_scores: Optional[Sequence[Sequence[np.ndarray]]] = None,
    seed: int = 0,
    f: float | None = None,
) -> PruningPlan:
    """
    Plan de poda por cabeza: top-d_k' por puntaje (empates al índice más bajo),
    selección DRRQR, muestreo uniforme sembrado (rand) o proyección PCA.

    Args:
        calibration: una CalibrationStats por capa (drrqr, swanda, pca)
        grad_scores: por capa, una lista de puntajes por cabeza (grad)

    Raises:
        OutOfRangeError: si la razón está fuera de [0, 1)
        ConfigError: si la estrategia no tiene los datos que necesita
    """
    strategy = Strategy(strategy)
    mode = SelectionMode(mode)
    if isinstance(layers, LayerParams):
        layers = [layers]
    layer_plans = []
    for layer_index, params in enumerate(layers):
        width = retained_width(params.dims.key_dim, ratio)
        layer_stats = calibration[layer_index] if calibration is not None else None
        layer_grads = grad_scores[layer_index] if grad_scores is not None else None
        heads = [
            _select_head(
                strategy, mode, width, layer_index, head_index, head,
                layer_stats.heads[head_index] if layer_stats is not None else None,
                layer_grads[head_index] if layer_grads is not None else None,
                seed, f,
            )
            for head_index, head in enumerate(params.heads)
        ]
        layer_plans.append(LayerPlan(heads=heads))

    plan = PruningPlan(layers=layer_plans, ratio=ratio, hardware_aligned=not strategy.is_pca)
    if not plan.hardware_aligned:
        logger.warning("⚠️ Plan PCA: la proyección no está alineada a ejes y adapta los filtros de convolución")
    logger.info("✅ Plan '%s' (%s) con razón %.2f para %d capas", strategy.value, mode.value, ratio, len(layers))
    return plan


# ---------------------------------------------------------------------------
# Aplicación del plan
# ---------------------------------------------------------------------------

def _apply_pca_head(head: HeadParams, transform: PcaTransform) -> HeadParams:
    width = transform.t.shape[0]
    conv_q = adapt_conv_filters(transform.basis, head.conv_q)[:width]
    conv_k = adapt_conv_filters(transform.basis, head.conv_k)[:width]
    return head.model_copy(update={
        "w_q": head.w_q @ transform.t.T,
        "w_k": head.w_k @ transform.t.T,
        "conv_q": conv_q,
        "conv_k": conv_k,
    })


def apply_pca(params: LayerParams, transforms: Sequence[PcaTransform]) -> LayerParams:
    """Aplica T a W_Q/W_K (W T^T) y la adaptación diagonal a los filtros de q y k."""
    if len(transforms) != len(params.heads):
        raise ShapeMismatchError("apply_pca: se requiere una transformación por cabeza")
    heads = [_apply_pca_head(head, transform) for head, transform in zip(params.heads, transforms)]
    return LayerParams(heads=heads, w_o=params.w_o, rms_eps=params.rms_eps)


def apply_plan(params: LayerParams, plan: PruningPlan | LayerPlan, layer: int = 0) -> LayerParams:
    """
    Recorta columnas de W_Q y W_K y las filas correspondientes de conv_q y conv_k.

    W_V, conv_v, W_beta, W_alpha y W_o no cambian.

    Raises:
        ShapeMismatchError: si el plan no corresponde a la capa
        OutOfRangeError: si algún índice excede d_k
    """
    layer_plan = plan.layers[layer] if isinstance(plan, PruningPlan) else plan
    if len(layer_plan.heads) != len(params.heads):
        raise ShapeMismatchError(
            f"el plan tiene {len(layer_plan.heads)} cabezas y la capa {len(params.heads)}"
        )
    heads = []
    for head, head_plan in zip(params.heads, layer_plan.heads):
        if head_plan.key_dim != head.key_dim or head_plan.retained[-1] >= head.key_dim:
            raise OutOfRangeError(
                f"plan para d_k={head_plan.key_dim} aplicado a una cabeza con d_k={head.key_dim}"
            )
        if head_plan.transform is not None:
            heads.append(_apply_pca_head(head, head_plan.transform))
            continue
        retained = head_plan.retained
        heads.append(head.model_copy(update={
            "w_q": head.w_q[:, retained],
            "w_k": head.w_k[:, retained],
            "conv_q": head.conv_q[retained],
            "conv_k": head.conv_k[retained],
        }))
    return LayerParams(heads=heads, w_o=params.w_o, rms_eps=params.rms_eps)


def apply_plan_to_model(model: ToyModel, plan: PruningPlan) -> ToyModel:
    if len(plan.layers) != len(model.layers):
        raise ShapeMismatchError(f"el plan tiene {len(plan.layers)} capas y el modelo {len(model.layers)}")
    layers = [apply_plan(params, plan, index) for index, params in enumerate(model.layers)]
    return model.model_copy(update={"layers": layers})
