"""
Mezcladores de secuencia: atención lineal, DeltaNet y Gated DeltaNet.

Todas las rutas hacia adelante aceptan un eje de lote opcional: x con forma
(T, h) o (B, T, h). Las proyecciones se guardan como (h x d) y se aplican
como x^T W.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import OutOfRangeError, ShapeMismatchError
from app.core.logging import get_logger
from app.schemas.base import as_matrix, as_vector
from app.schemas.mixer import (
    HeadCapture,
    HeadDims,
    HeadParams,
    LayerOutput,
    LayerParams,
    MixerState,
    SequenceBatch,
    Variant,
)

logger = get_logger(__name__)

# Constantes del modelo de FLOPs por token y por cabeza
STATE_FLOPS = {Variant.LINEAR: 4, Variant.DELTA: 6, Variant.GATED: 7}
NORM_FLOPS = 6
VALUE_FLOPS = {Variant.LINEAR: 0, Variant.DELTA: 2, Variant.GATED: 2}


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def identity_filters(channels: int, conv_len: int) -> np.ndarray:
    """Filtros que dejan pasar la señal sin retardo: fila [1, 0, ..., 0]."""
    filters = np.zeros((channels, conv_len))
    filters[:, 0] = 1.0
    return filters


def causal_conv(x: np.ndarray, filters: np.ndarray) -> np.ndarray:
    # out[..., t, i] = sum_j filters[i, j] * x[..., t - j, i], con x = 0 antes de t = 0
    steps = x.shape[-2]
    out = np.zeros_like(x)
    for j in range(min(filters.shape[1], steps)):
        out[..., j:, :] += x[..., : steps - j, :] * filters[:, j]
    return out


def causal_conv_backward(x: np.ndarray, filters: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    steps = x.shape[-2]
    lead_axes = tuple(range(grad_out.ndim - 1))
    grad_x = np.zeros_like(x)
    grad_f = np.zeros_like(filters)
    for j in range(min(filters.shape[1], steps)):
        grad_x[..., : steps - j, :] += grad_out[..., j:, :] * filters[:, j]
        grad_f[:, j] = np.sum(grad_out[..., j:, :] * x[..., : steps - j, :], axis=lead_axes)
    return grad_x, grad_f


def conv1d_causal(x, filters) -> np.ndarray:
    """
    Convolución causal por canal (depthwise) con relleno izquierdo de ceros de largo l-1.

    Args:
        x: matriz T x c
        filters: matriz c x l

    Raises:
        ShapeMismatchError: si el número de canales no coincide
    """
    x = as_matrix(x, "x")
    filters = as_matrix(filters, "filters")
    if x.shape[1] != filters.shape[0]:
        raise ShapeMismatchError(
            f"conv1d_causal: x tiene {x.shape[1]} canales y filters {filters.shape[0]} filas"
        )
    return causal_conv(x, filters)


def linear_attention_recurrent(q, k, v) -> Tuple[np.ndarray, np.ndarray]:
    """
    Forma recurrente: S_t = S_{t-1} + v_t k_t^T, o_t = S_t q_t, con S_0 = 0.

    Returns:
        (salidas T x d_v, estado final S_T)
    """
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if q.shape != k.shape or v.shape[0] != q.shape[0]:
        raise ShapeMismatchError("linear_attention_recurrent: dimensiones inconsistentes")
    s = np.zeros((v.shape[1], k.shape[1]))
    outputs = np.zeros((q.shape[0], v.shape[1]))
    for t in range(q.shape[0]):
        s = s + np.outer(v[t], k[t])
        outputs[t] = s @ q[t]
    return outputs, s


def linear_attention_parallel(q, k, v) -> np.ndarray:
    """Forma paralela con máscara causal: O = (Q K^T ⊙ L) V."""
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    if q.shape != k.shape or v.shape[0] != q.shape[0]:
        raise ShapeMismatchError("linear_attention_parallel: dimensiones inconsistentes")
    scores = np.tril(q @ k.T)
    return scores @ v


def _check_unit_interval(value: float, name: str) -> float:
    if not 0.0 < value <= 1.0:
        raise OutOfRangeError(f"{name}={value} fuera de (0, 1]")
    return float(value)


def delta_step(state: MixerState, k, v, beta: float) -> MixerState:
    """
    Regla delta: S' = S (I - beta k k^T) + beta v k^T.

    Se espera ||k|| = 1 (la normalización ocurre aguas arriba).

    Raises:
        OutOfRangeError: si beta no está en (0, 1]
    """
    beta = _check_unit_interval(beta, "beta")
    k = as_vector(k, "k")
    v = as_vector(v, "v")
    s = state.s
    return MixerState(s=s - beta * np.outer(s @ k - v, k))


def gated_delta_step(state: MixerState, k, v, beta: float, alpha: float, gamma: Optional[float] = None) -> MixerState:
    """
    Regla delta con decaimiento: S' = S (alpha I - beta k k^T) + gamma v k^T, gamma = beta por defecto.

    Raises:
        OutOfRangeError: si alpha o beta no están en (0, 1]
    """
    beta = _check_unit_interval(beta, "beta")
    alpha = _check_unit_interval(alpha, "alpha")
    gamma = beta if gamma is None else float(gamma)
    k = as_vector(k, "k")
    v = as_vector(v, "v")
    s = state.s
    return MixerState(s=alpha * s - beta * np.outer(s @ k, k) + gamma * np.outer(v, k))


def mixer_recurrence(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    beta: Optional[np.ndarray],
    alpha: Optional[np.ndarray],
    variant: Variant,
    capture_states: bool = False,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Recurrencia sobre flujos ya normalizados (frontera del mezclador).

    q, k: (..., T, d_k); v: (..., T, d_v); beta, alpha: (..., T).

    Returns:
        (salidas (..., T, d_v), estados (..., T, d_v, d_k) si capture_states)
    """
    variant = Variant(variant)
    lead = q.shape[:-2]
    steps, key_dim = q.shape[-2], q.shape[-1]
    value_dim = v.shape[-1]
    s = np.zeros(lead + (value_dim, key_dim))
    outputs = np.zeros(lead + (steps, value_dim))
    states = np.zeros(lead + (steps, value_dim, key_dim)) if capture_states else None

    for t in range(steps):
        kt = k[..., t, :]
        vt = v[..., t, :]
        if variant == Variant.LINEAR:
            s = s + vt[..., :, None] * kt[..., None, :]
        else:
            sk = (s @ kt[..., :, None])[..., 0]
            err = beta[..., t, None] * (sk - vt)
            if variant == Variant.GATED:
                s = alpha[..., t, None, None] * s
            s = s - err[..., :, None] * kt[..., None, :]
        outputs[..., t, :] = (s @ q[..., t, :, None])[..., 0]
        if capture_states:
            states[..., t, :, :] = s
    return outputs, states


def flops_per_step(key_dim: int, value_dim: int, variant: Variant | str) -> int:
    """
    FLOPs por token y por cabeza del mezclador.

    c1 * d_v * d_k (lectura, actualización y consulta del estado)
    + 6 * d_k (normalización de q y k) + c3 * d_v (residuo del valor).
    No hay término en d_k^2: (I - beta k k^T) nunca se forma explícitamente.
    """
    variant = Variant(variant)
    return STATE_FLOPS[variant] * value_dim * key_dim + NORM_FLOPS * key_dim + VALUE_FLOPS[variant] * value_dim


@dataclass
class HeadTrace:
    z_q: np.ndarray
    z_k: np.ndarray
    z_v: np.ndarray
    c_q: np.ndarray
    c_k: np.ndarray
    c_v: np.ndarray
    q_raw: np.ndarray
    k_raw: np.ndarray
    v: np.ndarray
    q_norm: np.ndarray
    k_norm: np.ndarray
    q: np.ndarray
    k: np.ndarray
    beta: np.ndarray
    alpha: Optional[np.ndarray]
    outputs: np.ndarray
    states: np.ndarray


@dataclass
class LayerTrace:
    x: np.ndarray
    variant: Variant
    heads: List[HeadTrace] = field(default_factory=list)
    o: Optional[np.ndarray] = None
    rms: Optional[np.ndarray] = None
    normed: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None


def _as_inputs(batch, model_dim: int) -> np.ndarray:
    x = batch.x if isinstance(batch, SequenceBatch) else np.asarray(batch, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[-1] != model_dim:
        raise ShapeMismatchError(
            f"layer_forward: se esperaba (T, {model_dim}) o (B, T, {model_dim}), se recibió {x.shape}"
        )
    if x.shape[-2] < 1:
        raise ShapeMismatchError("layer_forward: T debe ser >= 1")
    return x


def _head_forward(head: HeadParams, x: np.ndarray, variant: Variant, l2_eps: float) -> HeadTrace:
    # 1. Proyecciones y mezcla local
    z_q, z_k, z_v = x @ head.w_q, x @ head.w_k, x @ head.w_v
    c_q = causal_conv(z_q, head.conv_q)
    c_k = causal_conv(z_k, head.conv_k)
    c_v = causal_conv(z_v, head.conv_v)
    q_raw, k_raw, v = silu(c_q), silu(c_k), silu(c_v)
    beta = sigmoid(x @ head.w_beta)[..., 0]
    alpha = sigmoid(x @ head.w_alpha)[..., 0] if variant == Variant.GATED else None

    # 2. Normalización l2 de q y k
    q_norm = np.sqrt(np.sum(q_raw * q_raw, axis=-1, keepdims=True) + l2_eps)
    k_norm = np.sqrt(np.sum(k_raw * k_raw, axis=-1, keepdims=True) + l2_eps)
    q, k = q_raw / q_norm, k_raw / k_norm

    # 3. Recurrencia
    outputs, states = mixer_recurrence(q, k, v, beta, alpha, variant, capture_states=True)
    return HeadTrace(
        z_q=z_q, z_k=z_k, z_v=z_v, c_q=c_q, c_k=c_k, c_v=c_v,
        q_raw=q_raw, k_raw=k_raw, v=v, q_norm=q_norm, k_norm=k_norm,
        q=q, k=k, beta=beta, alpha=alpha, outputs=outputs, states=states,
    )


def trace_layer(params: LayerParams, batch, variant: Variant | str, l2_eps: float | None = None) -> LayerTrace:
    """Pasada hacia adelante que conserva todos los intermedios (para la retropropagación)."""
    variant = Variant(variant)
    l2_eps = settings.L2_EPS if l2_eps is None else l2_eps
    x = _as_inputs(batch, params.dims.model_dim)
    trace = LayerTrace(x=x, variant=variant)
    for head in params.heads:
        trace.heads.append(_head_forward(head, x, variant, l2_eps))

    # 4. Concatenación de cabezas, RMSNorm y proyección de salida
    trace.o = np.concatenate([h.outputs for h in trace.heads], axis=-1)
    trace.rms = np.sqrt(np.mean(trace.o * trace.o, axis=-1, keepdims=True) + params.rms_eps)
    trace.normed = trace.o / trace.rms
    trace.y = trace.normed @ params.w_o
    return trace


def layer_forward(
    params: LayerParams,
    batch,
    variant: Variant | str,
    capture_states: bool = False,
    l2_eps: float | None = None,
) -> LayerOutput:
    """
    Capa DeltaNet típica: proyecciones, Conv1D causal, SiLU, normalización l2,
    recurrencia, concatenación de cabezas, RMSNorm y W_o.

    Las activaciones capturadas para estadísticas de poda son post-SiLU y
    pre-normalización (q_raw, k_raw).
    """
    trace = trace_layer(params, batch, variant, l2_eps)
    heads = [
        HeadCapture(
            q_raw=h.q_raw, k_raw=h.k_raw, v=h.v, q=h.q, k=h.k,
            beta=h.beta, alpha=h.alpha,
            states=h.states if capture_states else None,
        )
        for h in trace.heads
    ]
    return LayerOutput(outputs=trace.y, heads=heads, normed=trace.normed)


def init_layer_params(dims: HeadDims, rng: np.random.Generator, conv_noise: float = 0.1) -> LayerParams:
    """Pesos aleatorios con escala 1/sqrt(fan_in); filtros cercanos a la identidad."""
    h, d_k, d_v, l = dims.model_dim, dims.key_dim, dims.value_dim, dims.conv_len
    scale = 1.0 / np.sqrt(h)
    heads = []
    for _ in range(dims.num_heads):
        heads.append(HeadParams(
            w_q=rng.normal(0.0, scale, (h, d_k)),
            w_k=rng.normal(0.0, scale, (h, d_k)),
            w_v=rng.normal(0.0, scale, (h, d_v)),
            w_beta=rng.normal(0.0, scale, (h, 1)),
            w_alpha=rng.normal(0.0, scale, (h, 1)),
            conv_q=identity_filters(d_k, l) + conv_noise * rng.standard_normal((d_k, l)),
            conv_k=identity_filters(d_k, l) + conv_noise * rng.standard_normal((d_k, l)),
            conv_v=identity_filters(d_v, l) + conv_noise * rng.standard_normal((d_v, l)),
        ))
    w_o = rng.normal(0.0, 1.0 / np.sqrt(dims.num_heads * d_v), (dims.num_heads * d_v, h))
    return LayerParams(heads=heads, w_o=w_o, rms_eps=settings.RMS_EPS)
