"""
Gradientes en modo reverso a través de layer_forward.

La recurrencia se desenrolla por completo usando los estados S_t guardados
en la pasada hacia adelante (T es pequeño en esta escala).
"""
import math
from typing import Callable, Dict, Tuple

import numpy as np

from app.core.errors import DegenerateInputError, NonFiniteError, ShapeMismatchError, ZeroMatrixError
from app.core.logging import get_logger
from app.schemas.base import as_matrix, as_vector
from app.schemas.grad import AdamHyper, AdamState, LossKind, LossSpec, ParamGrads, SgdHyper
from app.schemas.mixer import HEAD_FIELDS, LayerParams, Variant
from app.services.linalg import condition_number
from app.services.mixers import (
    HeadTrace,
    LayerTrace,
    causal_conv_backward,
    silu_grad,
    trace_layer,
)

logger = get_logger(__name__)

NamedParams = Dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# Pérdidas
# ---------------------------------------------------------------------------

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def loss_value_and_grad(outputs: np.ndarray, loss: LossSpec) -> Tuple[float, np.ndarray]:
    """
    Valor de la pérdida y su gradiente respecto a las salidas.

    Raises:
        ShapeMismatchError: si targets no coincide con la forma de las salidas
        NonFiniteError: si la pérdida no es finita
    """
    targets = loss.targets
    if targets.shape != outputs.shape:
        raise ShapeMismatchError(f"targets {targets.shape} != salidas {outputs.shape}")

    if loss.kind == LossKind.SQUARED_ERROR:
        diff = outputs - targets
        value = 0.5 * float(np.sum(diff * diff))
        grad = diff
    else:
        row_mass = np.sum(targets, axis=-1, keepdims=True)
        active = int(np.count_nonzero(row_mass))
        if active == 0:
            return 0.0, np.zeros_like(outputs)
        log_p = _log_softmax(outputs)
        value = -float(np.sum(targets * log_p)) / active
        grad = (np.exp(log_p) * row_mass - targets) / active

    if not np.isfinite(value):
        raise NonFiniteError("la pérdida no es finita", errors=[f"loss={value}"])
    return value, grad


# ---------------------------------------------------------------------------
# Retropropagación de la capa
# ---------------------------------------------------------------------------

def layer_forward_tape(params: LayerParams, batch, variant: Variant | str, l2_eps: float | None = None) -> LayerTrace:
    """Pasada hacia adelante que guarda la cinta completa para layer_vjp."""
    return trace_layer(params, batch, variant, l2_eps)


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _recurrence_vjp(head: HeadTrace, grad_out: np.ndarray, variant: Variant):
    q, k, v, beta, alpha, states = head.q, head.k, head.v, head.beta, head.alpha, head.states
    steps = q.shape[-2]
    grad_q = np.zeros_like(q)
    grad_k = np.zeros_like(k)
    grad_v = np.zeros_like(v)
    grad_beta = np.zeros_like(beta)
    grad_alpha = np.zeros_like(beta)
    grad_s = np.zeros(states.shape[:-3] + states.shape[-2:])

    for t in reversed(range(steps)):
        s_t = states[..., t, :, :]
        s_prev = states[..., t - 1, :, :] if t > 0 else np.zeros_like(s_t)
        do = grad_out[..., t, :]
        qt, kt, vt = q[..., t, :], k[..., t, :], v[..., t, :]

        # o_t = S_t q_t
        grad_q[..., t, :] = (np.swapaxes(s_t, -1, -2) @ do[..., :, None])[..., 0]
        g = grad_s + do[..., :, None] * qt[..., None, :]
        gk = (g @ kt[..., :, None])[..., 0]

        if variant == Variant.LINEAR:
            grad_v[..., t, :] = gk
            grad_k[..., t, :] = (np.swapaxes(g, -1, -2) @ vt[..., :, None])[..., 0]
            grad_s = g
            continue

        # S_t = a S_{t-1} - b (S_{t-1} k - v) k^T
        b = beta[..., t]
        err = (s_prev @ kt[..., :, None])[..., 0] - vt
        grad_v[..., t, :] = b[..., None] * gk
        grad_k[..., t, :] = -b[..., None] * (
            (np.swapaxes(g, -1, -2) @ err[..., :, None])[..., 0]
            + (np.swapaxes(s_prev, -1, -2) @ gk[..., :, None])[..., 0]
        )
        grad_beta[..., t] = -np.sum(err * gk, axis=-1)
        if variant == Variant.GATED:
            a = alpha[..., t]
            grad_alpha[..., t] = np.sum(g * s_prev, axis=(-2, -1))
            g_decay = a[..., None, None] * g
        else:
            g_decay = g
        grad_s = g_decay - b[..., None, None] * gk[..., :, None] * kt[..., None, :]

    return grad_q, grad_k, grad_v, grad_beta, grad_alpha


def _normalize_vjp(unit: np.ndarray, norm: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    # u = a / sqrt(|a|^2 + eps)
    return (grad_unit - unit * np.sum(unit * grad_unit, axis=-1, keepdims=True)) / norm


def _head_vjp(head_params, head: HeadTrace, x: np.ndarray, grad_out: np.ndarray, variant: Variant):
    grad_q, grad_k, grad_v, grad_beta, grad_alpha = _recurrence_vjp(head, grad_out, variant)
    grads = {}
    grad_x = np.zeros_like(x)
    flat_x = _flat(x)

    streams = (
        ("q", head.q, head.q_norm, grad_q, head.c_q, head.z_q, head_params.conv_q, head_params.w_q),
        ("k", head.k, head.k_norm, grad_k, head.c_k, head.z_k, head_params.conv_k, head_params.w_k),
    )
    for name, unit, norm, grad_unit, conv_in, proj, filters, weight in streams:
        grad_raw = _normalize_vjp(unit, norm, grad_unit)
        grad_conv = grad_raw * silu_grad(conv_in)
        grad_proj, grads[f"conv_{name}"] = causal_conv_backward(proj, filters, grad_conv)
        grads[f"w_{name}"] = flat_x.T @ _flat(grad_proj)
        grad_x += grad_proj @ weight.T

    grad_conv_v = grad_v * silu_grad(head.c_v)
    grad_proj_v, grads["conv_v"] = causal_conv_backward(head.z_v, head_params.conv_v, grad_conv_v)
    grads["w_v"] = flat_x.T @ _flat(grad_proj_v)
    grad_x += grad_proj_v @ head_params.w_v.T

    if variant == Variant.LINEAR:
        grads["w_beta"] = np.zeros_like(head_params.w_beta)
    else:
        grad_logit = grad_beta * head.beta * (1.0 - head.beta)
        grads["w_beta"] = flat_x.T @ grad_logit.reshape(-1, 1)
        grad_x += grad_logit[..., None] * head_params.w_beta[:, 0]

    if variant == Variant.GATED:
        grad_logit = grad_alpha * head.alpha * (1.0 - head.alpha)
        grads["w_alpha"] = flat_x.T @ grad_logit.reshape(-1, 1)
        grad_x += grad_logit[..., None] * head_params.w_alpha[:, 0]
    else:
        grads["w_alpha"] = np.zeros_like(head_params.w_alpha)

    return grad_x, grads


def layer_vjp(params: LayerParams, trace: LayerTrace, grad_y: np.ndarray, prefix: str = "") -> Tuple[np.ndarray, NamedParams]:
    """
    Producto vector-Jacobiano de la capa: dada dL/dY devuelve (dL/dX, gradientes por parámetro).

    Las claves del diccionario siguen a LayerParams.named_parameters(prefix).
    """
    grads: NamedParams = {}
    value_dim = params.dims.value_dim

    # Y = N W_o, N = O / r
    grads[f"{prefix}w_o"] = _flat(trace.normed).T @ _flat(grad_y)
    grad_normed = grad_y @ params.w_o.T
    grad_o = (grad_normed - trace.normed * np.mean(grad_normed * trace.normed, axis=-1, keepdims=True)) / trace.rms

    grad_x = np.zeros_like(trace.x)
    for index, (head_params, head) in enumerate(zip(params.heads, trace.heads)):
        grad_out = grad_o[..., index * value_dim:(index + 1) * value_dim]
        head_grad_x, head_grads = _head_vjp(head_params, head, trace.x, grad_out, trace.variant)
        grad_x += head_grad_x
        for name in HEAD_FIELDS:
            grads[f"{prefix}heads.{index}.{name}"] = head_grads[name]
    return grad_x, grads


def layer_backward(
    params: LayerParams,
    batch,
    loss: LossSpec,
    variant: Variant | str = Variant.DELTA,
) -> Tuple[float, ParamGrads]:
    """
    Pérdida y gradientes exactos de todos los parámetros de la capa.

    Raises:
        NonFiniteError: si la pérdida o algún gradiente no es finito
    """
    trace = layer_forward_tape(params, batch, variant)
    value, grad_y = loss_value_and_grad(trace.y, loss)
    _, grads = layer_vjp(params, trace, grad_y)
    result = ParamGrads(grads=grads)
    if not result.is_finite():
        raise NonFiniteError("gradientes no finitos en layer_backward")
    return value, result


# ---------------------------------------------------------------------------
# Condicionamiento del gradiente de W_Q
# ---------------------------------------------------------------------------

def query_jacobian(s, x) -> np.ndarray:
    """
    Jacobiano de W_Q -> S W_Q^T x respecto a vec(W_Q), W_Q de forma (h x d_k).

    Se construye columna a columna evaluando la aplicación lineal en la base canónica.
    """
    s = as_matrix(s, "s")
    x = as_vector(x, "x")
    key_dim = s.shape[1]
    columns = []
    for j in range(x.shape[0]):
        for i in range(key_dim):
            unit = np.zeros((x.shape[0], key_dim))
            unit[j, i] = 1.0
            columns.append(s @ (unit.T @ x))
    return np.stack(columns, axis=1)


def query_jacobian_condition(s, x) -> float:
    """
    Número de condición del Jacobiano del gradiente de consultas; coincide con kappa(S).

    Raises:
        ZeroMatrixError: si S es cero
        DegenerateInputError: si x es cero
    """
    s = as_matrix(s, "s")
    x = as_vector(x, "x")
    if not np.any(s):
        raise ZeroMatrixError("query_jacobian_condition: S es cero")
    if not np.any(x):
        raise DegenerateInputError("query_jacobian_condition: x es cero")
    return condition_number(query_jacobian(s, x))


# ---------------------------------------------------------------------------
# Optimizadores
# ---------------------------------------------------------------------------

def _named(params) -> NamedParams:
    return params.named_parameters() if isinstance(params, LayerParams) else dict(params)


def _rebuild(params, values: NamedParams):
    return params.with_parameters(values) if isinstance(params, LayerParams) else values


def _grad_dict(grads) -> NamedParams:
    return grads.grads if isinstance(grads, ParamGrads) else grads


def sgd_step(params, grads, hyper: SgdHyper):
    """p <- p - lr * g. Acepta LayerParams o un diccionario de parámetros con nombre."""
    values = _named(params)
    grads = _grad_dict(grads)
    updated = {name: value - hyper.lr * grads[name] if name in grads else value for name, value in values.items()}
    return _rebuild(params, updated)


def adam_step(params, grads, hyper: AdamHyper, state: AdamState):
    """
    Un paso de Adam con corrección de sesgo.

    Returns:
        (parámetros actualizados, nuevo estado)
    """
    values = _named(params)
    grads = _grad_dict(grads)
    step = state.step + 1
    first = dict(state.m)
    second = dict(state.v)
    updated = {}
    for name, value in values.items():
        if name not in grads:
            updated[name] = value
            continue
        g = grads[name]
        first[name] = hyper.beta1 * first.get(name, np.zeros_like(g)) + (1.0 - hyper.beta1) * g
        second[name] = hyper.beta2 * second.get(name, np.zeros_like(g)) + (1.0 - hyper.beta2) * g * g
        m_hat = first[name] / (1.0 - hyper.beta1 ** step)
        v_hat = second[name] / (1.0 - hyper.beta2 ** step)
        updated[name] = value - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return _rebuild(params, updated), AdamState(step=step, m=first, v=second)


def scheduled_lr(base_lr: float, step: int, total_steps: int, warmup_steps: int = 0, min_ratio: float = 0.0) -> float:
    """
    Calentamiento lineal y luego decaimiento coseno hasta min_ratio * base_lr.

    El calentamiento se limita a un décimo de los pasos totales.
    """
    warmup = min(warmup_steps, total_steps // 10)
    if step < warmup:
        return base_lr * (step + 1) / warmup
    progress = (step - warmup) / max(1, total_steps - warmup - 1)
    cosine = 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))
    return base_lr * (min_ratio + (1.0 - min_ratio) * cosine)


# ---------------------------------------------------------------------------
# Oráculo de diferencias finitas
# ---------------------------------------------------------------------------

def finite_difference_grads(fn: Callable[[NamedParams], float], params: NamedParams, step: float = 1e-5) -> NamedParams:
    """Diferencias centrales entrada por entrada: (f(p + h) - f(p - h)) / 2h."""
    grads = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        for index in np.ndindex(value.shape):
            plus = {**params, name: value.copy()}
            minus = {**params, name: value.copy()}
            plus[name][index] += step
            minus[name][index] -= step
            grad[index] = (fn(plus) - fn(minus)) / (2.0 * step)
        grads[name] = grad
    return grads
