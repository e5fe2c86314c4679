"""
Álgebra lineal densa autocontenida.

Producto de matrices, QR de Householder con pivoteo de columnas, SVD por
Jacobi de un lado, número de condición y selección de columnas por
Strong Rank-Revealing QR (intercambios guiados por la ganancia rho).
"""
from typing import List, Sequence, Tuple

import numpy as np

from app.constants.pruning import (
    MAX_BARRIDOS_JACOBI,
    TOL_JACOBI,
    TOL_KAPPA_INFINITO,
    TOL_RANGO_NUMERICO,
    TOL_SRRQR_RELATIVA,
)
from app.core.config import settings
from app.core.errors import (
    NonConvergentError,
    OutOfRangeError,
    RankDeficientError,
    ShapeMismatchError,
    ZeroMatrixError,
)
from app.core.logging import get_logger
from app.schemas.base import as_matrix
from app.schemas.linalg import QrcpResult, SrrqrResult, SrrqrState

logger = get_logger(__name__)


def matmul(a, b) -> np.ndarray:
    """
    Producto de libro de texto con orden de suma fijo.

    Cada entrada acumula a[i, p] * b[p, j] para p = 0, 1, ... en ese orden.

    Raises:
        ShapeMismatchError: si a.cols != b.rows
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: dimensiones incompatibles {a.shape} x {b.shape}"
        )
    out = np.zeros((a.shape[0], b.shape[1]))
    for p in range(a.shape[1]):
        out += np.outer(a[:, p], b[p, :])
    return out


def qrcp(m) -> QrcpResult:
    """
    QR de Householder con pivoteo voraz por norma residual máxima.

    Los empates se rompen por el índice de columna más bajo. La diagonal de R
    se deja no negativa. Entradas con rango deficiente producen ceros al final
    de la diagonal.

    Returns:
        QrcpResult: q (rows x r), r (r x cols) y perm, con r = min(rows, cols)
    """
    m = as_matrix(m, "m")
    rows, cols = m.shape
    if rows < 1 or cols < 1:
        raise ShapeMismatchError("qrcp: la matriz no puede ser vacía")

    r = m.copy()
    q = np.eye(rows)
    perm = np.arange(cols)
    steps = min(rows, cols)

    for k in range(steps):
        norms = np.linalg.norm(r[k:, k:], axis=0)
        j = k + int(np.argmax(norms))
        if j != k:
            r[:, [k, j]] = r[:, [j, k]]
            perm[[k, j]] = perm[[j, k]]

        x = r[k:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        u = x.copy()
        u[0] += np.copysign(alpha, x[0])
        u /= np.linalg.norm(u)
        r[k:, :] -= 2.0 * np.outer(u, u @ r[k:, :])
        q[:, k:] -= 2.0 * np.outer(q[:, k:] @ u, u)
        r[k + 1:, k] = 0.0

    # Diagonal de R no negativa
    signs = np.where(np.diag(r[:steps, :steps]) < 0.0, -1.0, 1.0)
    r_thin = np.triu(r[:steps, :] * signs[:, None])
    q_thin = q[:, :steps] * signs[None, :]
    return QrcpResult(q=q_thin, r=r_thin, perm=perm.tolist())


def svd_jacobi(m) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    SVD delgada por rotaciones de Jacobi de un lado (Hestenes).

    Itera barridos sobre pares de columnas hasta que toda pareja cumple
    |a_i . a_j| <= 1e-12 * ||a_i|| ||a_j||.

    Returns:
        (u, s, vt) con s en orden no creciente y len(s) = min(rows, cols)
    """
    a = as_matrix(m, "m")
    if a.size == 0:
        raise ShapeMismatchError("svd: la matriz no puede ser vacía")
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T.copy()
    n = a.shape[1]
    v = np.eye(n)

    for _ in range(MAX_BARRIDOS_JACOBI):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai = a[:, i]
                aj = a[:, j]
                alpha = ai @ ai
                beta = aj @ aj
                gamma = ai @ aj
                if gamma == 0.0 or abs(gamma) <= TOL_JACOBI * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * ai - s * aj
                new_j = s * ai + c * aj
                a[:, i] = new_i
                a[:, j] = new_j
                vi = v[:, i].copy()
                vj = v[:, j].copy()
                v[:, i] = c * vi - s * vj
                v[:, j] = s * vi + c * vj
        if not rotated:
            break
    else:
        logger.warning("⚠️ Jacobi no convergió en %d barridos", MAX_BARRIDOS_JACOBI)

    sigma = np.linalg.norm(a, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    a = a[:, order]
    v = v[:, order]
    u = np.zeros_like(a)
    nonzero = sigma > 0.0
    u[:, nonzero] = a[:, nonzero] / sigma[nonzero]

    if transposed:
        return v, sigma, u.T
    return u, sigma, v.T


def svd_values(m) -> np.ndarray:
    """Valores singulares en orden no creciente."""
    return svd_jacobi(m)[1]


def condition_number(m) -> float:
    """
    Número de condición l2: sigma_max / sigma_min.

    Devuelve +inf si sigma_min < 1e-14 * sigma_max.

    Raises:
        ZeroMatrixError: si la matriz es nula
    """
    s = svd_values(m)
    if s[0] == 0.0:
        raise ZeroMatrixError("condition_number: la matriz es nula")
    if s[-1] < TOL_KAPPA_INFINITO * s[0]:
        return float("inf")
    return float(s[0] / s[-1])


def numeric_rank(m, tol: float = TOL_RANGO_NUMERICO) -> int:
    """Cantidad de valores singulares mayores que tol * sigma_1."""
    s = svd_values(m)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Matriz ortogonal de Haar a partir del QR de una gaussiana."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0.0, -1.0, 1.0)[None, :]


def _gains_from_r(r: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # rho_ij = sqrt(U_ij^2 + (gamma_j / omega_i)^2), U = A^-1 B
    a = r[:k, :k]
    b = r[:k, k:]
    c = r[k:, k:]
    a_inv = np.linalg.solve(a, np.eye(k))
    u = a_inv @ b
    omega = 1.0 / np.linalg.norm(a_inv, axis=1)
    if c.shape[0] == 0:
        gamma = np.zeros(b.shape[1])
    else:
        gamma = np.linalg.norm(c, axis=0)
    rho = np.hypot(u, gamma[None, :] / omega[:, None])
    return rho, omega, gamma


def _rotate_rows(r: np.ndarray, top: int, bottom: int, col: int) -> None:
    # Givens sobre las filas (top, bottom) que anula r[bottom, col]
    a, b = r[top, col], r[bottom, col]
    if b == 0.0:
        return
    hyp = np.hypot(a, b)
    c, s = a / hyp, b / hyp
    pair = r[[top, bottom], col:]
    r[[top, bottom], col:] = np.array([[c, s], [-s, c]]) @ pair
    r[bottom, col] = 0.0


def _swap_columns(r: np.ndarray, perm: np.ndarray, k: int, i: int, j: int) -> None:
    n = r.shape[1]
    # Columna i al final del bloque A por permutación cíclica
    order = list(range(i)) + list(range(i + 1, k)) + [i] + list(range(k, n))
    r[:, :] = r[:, order]
    perm[:] = perm[order]
    # A quedó Hessenberg superior: se re-triangula con Givens
    for h in range(i, k - 1):
        _rotate_rows(r, h, h + 1, h)
    # Intercambio con la candidata j del bloque derecho
    r[:, [k - 1, k + j]] = r[:, [k + j, k - 1]]
    perm[[k - 1, k + j]] = perm[[k + j, k - 1]]
    # Se anula la parte de la nueva columna k-1 que cae bajo la diagonal
    for row in range(r.shape[0] - 1, k - 1, -1):
        _rotate_rows(r, row - 1, row, k - 1)


def _log_abs_det(r: np.ndarray, k: int) -> float:
    return float(np.sum(np.log(np.abs(np.diag(r)[:k]))))


def srrqr(m, k: int, f: float | None = None) -> SrrqrResult:
    """
    Strong Rank-Revealing QR: QRCP seguido de intercambios de columnas.

    En cada iteración se toma el par (i*, j*) que maximiza rho y se acepta el
    intercambio si rho > f. Cada intercambio aceptado multiplica |det(A_k)| por
    rho_{i*j*}. El ciclo termina cuando max rho <= f * (1 + 1e-12).

    Args:
        m: matriz rows x cols
        k: cantidad de columnas a seleccionar, 1 <= k < cols
        f: tolerancia >= 1 (por defecto settings.SRRQR_TOLERANCE)

    Raises:
        OutOfRangeError: si k o f están fuera de rango
        RankDeficientError: si sigma_k(m) <= 1e-12 * sigma_1(m)
        NonConvergentError: si se superan 10 * cols * k intercambios
    """
    m = as_matrix(m, "m")
    f = settings.SRRQR_TOLERANCE if f is None else float(f)
    rows, cols = m.shape
    if not 1 <= k < cols:
        raise OutOfRangeError(f"srrqr: k={k} fuera de rango [1, {cols})")
    if f < 1.0:
        raise OutOfRangeError(f"srrqr: f={f} debe ser >= 1")
    if k > rows:
        raise RankDeficientError(f"srrqr: {rows} filas no admiten {k} columnas independientes")
    sigma = svd_values(m)
    if sigma[0] == 0.0 or sigma[k - 1] <= 1e-12 * sigma[0]:
        raise RankDeficientError(
            f"srrqr: sigma_{k} = {sigma[k - 1]:.3e} es numéricamente nulo"
        )

    factor = qrcp(m)
    r = factor.r.copy()
    perm = np.array(factor.perm)
    threshold = f * (1.0 + TOL_SRRQR_RELATIVA)
    max_swaps = 10 * cols * k
    log_dets = [_log_abs_det(r, k)]
    swaps = 0

    while True:
        rho, omega, gamma = _gains_from_r(r, k)
        i, j = np.unravel_index(int(np.argmax(rho)), rho.shape)
        best = float(rho[i, j])
        if best <= threshold:
            break
        if swaps >= max_swaps:
            raise NonConvergentError(
                f"srrqr: {swaps} intercambios sin alcanzar rho <= {f}"
            )
        _swap_columns(r, perm, k, int(i), int(j))
        swaps += 1
        log_dets.append(_log_abs_det(r, k))
        logger.debug("🔍 SRRQR intercambio %d: (%d, %d) rho=%.6f", swaps, i, j, best)

    state = SrrqrState(
        r_factor=r,
        perm=perm.tolist(),
        omega=omega.tolist(),
        gamma=gamma.tolist(),
        k=k,
        f=f,
    )
    return SrrqrResult(
        selected=perm[:k].tolist(),
        perm=perm.tolist(),
        swaps=swaps,
        max_rho=best,
        log_abs_dets=log_dets,
        state=state,
    )


def srrqr_select(m, k: int, f: float | None = None) -> List[int]:
    """Índices de las k columnas elegidas (Pi[1:k])."""
    return srrqr(m, k, f).selected


def swap_gains(m, selected: Sequence[int]) -> np.ndarray:
    """
    Re-evalúa la matriz rho a partir de una selección, sin pivoteo.

    Usa una QR de referencia sobre [M_sel, M_resto]; rho depende solo del
    conjunto elegido, no del orden interno.
    """
    m = as_matrix(m, "m")
    chosen = [int(c) for c in selected]
    if len(set(chosen)) != len(chosen):
        raise OutOfRangeError("swap_gains: índices repetidos")
    rest = [c for c in range(m.shape[1]) if c not in set(chosen)]
    _, r = np.linalg.qr(m[:, chosen + rest])
    rho, _, _ = _gains_from_r(r, len(chosen))
    return rho
