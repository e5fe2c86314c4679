"""
Verificación ejecutable de las cotas y propiedades teóricas.

Cada chequeo corre ensayos Monte Carlo con una semilla por ensayo
(default_rng([seed, trial])) y devuelve un CheckResult con el número de
violaciones y la holgura relativa más ajustada observada.
"""
import itertools
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from app.constants.pruning import ERRORES_ESTANDAR, GAMMA_MINIMO, RESPUESTA_MINIMA
from app.core.errors import ConfigError, DegenerateInputError, ZeroMatrixError
from app.core.logging import get_logger
from app.schemas.mixer import MixerState, Variant
from app.schemas.plan import HeadCalibration, SelectionMode
from app.schemas.report import CheckResult, VerifyReport
from app.services.grad_engine import query_jacobian_condition
from app.services.linalg import (
    condition_number,
    numeric_rank,
    random_orthogonal,
    srrqr,
    svd_values,
    swap_gains,
)
from app.services.mixers import causal_conv, gated_delta_step, mixer_recurrence
from app.services.pruning import adapt_conv_filters, diagonal_adaptation_error, pca_transform
from app.services.rank_diagnostics import amplification_ratio, effective_rank, mu_constant

logger = get_logger(__name__)

SNR_DIMS = (4, 8, 16)


class _SlackTracker:
    """Acumula violaciones y la peor holgura relativa de desigualdades lower <= upper."""

    def __init__(self, name: str, tol: float = 1e-10):
        self.name = name
        self.tol = tol
        self.trials = 0
        self.violations = 0
        self.rejected = 0
        self.worst = float("inf")
        self.details: Dict[str, float] = {}

    def holds(self, lower: float, upper: float) -> bool:
        scale = max(abs(lower), abs(upper), 1e-300)
        slack = (upper - lower) / scale
        self.worst = min(self.worst, slack)
        if slack < -self.tol:
            self.violations += 1
            return False
        return True

    def close(self, a: float, b: float, tol: float) -> bool:
        error = abs(a - b) / max(abs(a), abs(b), 1.0)
        self.worst = min(self.worst, tol - error)
        if error > tol:
            self.violations += 1
            return False
        return True

    def result(self) -> CheckResult:
        worst = 0.0 if self.worst == float("inf") else float(self.worst)
        result = CheckResult(
            name=self.name,
            trials=self.trials,
            violations=self.violations,
            worst_slack=worst,
            passed=self.violations == 0,
            rejected=self.rejected,
            details=self.details,
        )
        status = "✅" if result.passed else "❌"
        logger.info("%s %s: %d ensayos, %d violaciones, holgura %.3e", status, self.name, result.trials, result.violations, worst)
        return result


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def _unit_interval(rng: np.random.Generator, size=None):
    # (0, 1]
    return 1.0 - rng.random(size)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# Cota de rango del estado
# ---------------------------------------------------------------------------

def verify_rank_bound(trials: int = 200, dims: Tuple[int, int] = (6, 6), seed: int = 0, steps: int = 10) -> CheckResult:
    """rank(S_t) <= min(rank K_t, rank V_t) <= t en la recursión general con alpha, beta, gamma."""
    key_dim, value_dim = dims
    tracker = _SlackTracker("rank_bound")
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        key_basis = rng.standard_normal((key_dim, int(rng.integers(1, key_dim + 1))))
        value_basis = rng.standard_normal((value_dim, int(rng.integers(1, value_dim + 1))))
        state = MixerState.zeros(value_dim, key_dim)
        keys, values = [], []
        for t in range(1, steps + 1):
            k = _unit(key_basis @ rng.standard_normal(key_basis.shape[1]))
            v = value_basis @ rng.standard_normal(value_basis.shape[1])
            alpha, beta, gamma = _unit_interval(rng, 3)
            state = gated_delta_step(state, k, v, beta, alpha, gamma)
            keys.append(k)
            values.append(v)
            rank_s = numeric_rank(state.s)
            bound = min(numeric_rank(np.array(keys)), numeric_rank(np.array(values)))
            tracker.holds(rank_s, bound)
            tracker.holds(bound, t)
        tracker.trials += 1
    return tracker.result()


# ---------------------------------------------------------------------------
# Cota sándwich del rango efectivo
# ---------------------------------------------------------------------------

def sandwich_bound(k: np.ndarray, v: np.ndarray) -> Tuple[float, float]:
    """
    (nu(V) / kappa(K)^2, er(S)) con S = V^T K y nu(V) el rango efectivo de la
    proyección de V sobre col(K).

    Raises:
        ZeroMatrixError: si S es nula
    """
    s = v.T @ k
    er_s = effective_rank(s)
    coefficients, *_ = np.linalg.lstsq(k, v, rcond=None)
    projected = k @ coefficients
    lower = effective_rank(projected) / condition_number(k) ** 2
    return lower, er_s


def verify_sandwich(trials: int = 500, dims: Tuple[int, int, int] = (8, 4, 4), seed: int = 0) -> CheckResult:
    """nu(V)/kappa^2(K) <= er(S); K con rango columna completo (si no, se re-muestrea)."""
    samples, key_dim, value_dim = dims
    tracker = _SlackTracker("sandwich")
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        while True:
            k = rng.standard_normal((samples, key_dim)) * np.exp(rng.uniform(-2.0, 0.0, key_dim))
            v = rng.standard_normal((samples, value_dim))
            if numeric_rank(k) < key_dim:
                tracker.rejected += 1
                continue
            try:
                lower, er_s = sandwich_bound(k, v)
            except ZeroMatrixError:
                tracker.rejected += 1
                continue
            break
        tracker.holds(lower, er_s)
        tracker.trials += 1
    return tracker.result()


# ---------------------------------------------------------------------------
# Amplificación del ruido
# ---------------------------------------------------------------------------

def _draw_amplification(rng: np.random.Generator, d: int):
    while True:
        s = rng.standard_normal((d, d)) * np.exp(rng.uniform(-3.0, 0.0, d))[None, :]
        q_star = rng.standard_normal(d)
        n = rng.standard_normal(d)
        try:
            result = amplification_ratio(s, q_star, n)
        except DegenerateInputError:
            yield None
            continue
        spectral = svd_values(s)[0]
        if result.gamma < GAMMA_MINIMO or np.linalg.norm(s @ q_star) < RESPUESTA_MINIMA * spectral * np.linalg.norm(q_star):
            yield None
            continue
        yield result


def _amplification_samples(trials: int, dims: Sequence[int], seed: int, tracker: _SlackTracker) -> Iterable:
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        d = dims[trial % len(dims)]
        for result in _draw_amplification(rng, d):
            if result is None:
                tracker.rejected += 1
                continue
            yield result
            break


def verify_theorem_snr(trials: int = 1000, d: Sequence[int] | int = SNR_DIMS, seed: int = 0) -> CheckResult:
    """delta / sqrt(er) <= R <= sqrt(er) / gamma en cada muestra."""
    dims = (d,) if isinstance(d, int) else tuple(d)
    tracker = _SlackTracker("theorem_snr")
    for result in _amplification_samples(trials, dims, seed, tracker):
        root = np.sqrt(result.effective_rank)
        tracker.holds(result.delta / root, result.ratio)
        tracker.holds(result.ratio, root / result.gamma)
        tracker.trials += 1
    return tracker.result()


def verify_kappa_bounds(trials: int = 1000, d: Sequence[int] | int = SNR_DIMS, seed: int = 0) -> CheckResult:
    """
    1/kappa(S) <= R <= kappa(S) en cada muestra.

    También registra en qué fracción de muestras la cota superior kappa es más
    ajustada que sqrt(er)/gamma (sin afirmar ningún orden).
    """
    dims = (d,) if isinstance(d, int) else tuple(d)
    tracker = _SlackTracker("kappa_bounds")
    tighter = 0
    for result in _amplification_samples(trials, dims, seed, tracker):
        tracker.holds(1.0 / result.kappa, result.ratio)
        tracker.holds(result.ratio, result.kappa)
        if result.kappa <= np.sqrt(result.effective_rank) / result.gamma:
            tighter += 1
        tracker.trials += 1
    tracker.details["kappaUpperTighterFraction"] = tighter / max(tracker.trials, 1)
    return tracker.result()


def expected_relative_error(s: np.ndarray, q_star: np.ndarray, xi: float, draws: int, rng: np.random.Generator) -> Tuple[float, float]:
    """Media Monte Carlo de ||S n|| / ||S q*|| con n ~ N(0, xi^2 I) y su error estándar."""
    noise = rng.standard_normal((draws, s.shape[1])) * xi
    errors = np.linalg.norm(noise @ s.T, axis=1) / np.linalg.norm(s @ q_star)
    return float(np.mean(errors)), float(np.std(errors, ddof=1) / np.sqrt(draws))


def corollary_bounds(s: np.ndarray, q_star: np.ndarray, xi: float) -> Tuple[float, float]:
    """(sqrt(2 / (pi er)) xi, sqrt(er) / gamma * xi * mu(d)) para ||q*|| = 1."""
    result = amplification_ratio(s, q_star, q_star)
    er = result.effective_rank
    lower = np.sqrt(2.0 / (np.pi * er)) * xi
    upper = np.sqrt(er) / result.gamma * xi * mu_constant(s.shape[1])
    return float(lower), float(upper)


def verify_corollary_expected(
    trials: int = 20,
    d: int = 4,
    xi: float = 0.1,
    seed: int = 0,
    draws: int = 10_000,
) -> CheckResult:
    """La media del error relativo de recuperación cae en [lower - 3SE, upper + 3SE]."""
    tracker = _SlackTracker("corollary_expected", tol=0.0)
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        while True:
            s = random_orthogonal(d, rng) @ np.diag(rng.uniform(0.5, 2.0, d)) @ random_orthogonal(d, rng)
            q_star = _unit(rng.standard_normal(d))
            if amplification_ratio(s, q_star, q_star).gamma >= GAMMA_MINIMO:
                break
            tracker.rejected += 1
        lower, upper = corollary_bounds(s, q_star, xi)
        mean, se = expected_relative_error(s, q_star, xi, draws, rng)
        tracker.holds(lower - ERRORES_ESTANDAR * se, mean)
        tracker.holds(mean, upper + ERRORES_ESTANDAR * se)
        tracker.trials += 1
    return tracker.result()


# ---------------------------------------------------------------------------
# Propiedades del rango efectivo
# ---------------------------------------------------------------------------

def verify_er_properties(trials: int = 200, seed: int = 0) -> CheckResult:
    """Invariancia por transposición y rotaciones, 1 <= er <= rank, kappa^2 >= rank/er, caso de igualdad."""
    tracker = _SlackTracker("er_properties")
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        rows, cols = (int(x) for x in rng.integers(2, 7, size=2))
        rank = int(rng.integers(1, min(rows, cols) + 1))
        a = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
        er = effective_rank(a)

        tracker.close(er, effective_rank(a.T), 1e-9)
        c = float(rng.uniform(0.1, 10.0)) * (1.0 if rng.random() < 0.5 else -1.0)
        rotated = c * random_orthogonal(rows, rng) @ a @ random_orthogonal(cols, rng).T
        tracker.close(er, effective_rank(rotated), 1e-9)

        sigma = svd_values(a)
        algebraic = numeric_rank(a)
        tracker.holds(1.0, er)
        tracker.holds(er, algebraic)
        tracker.holds(algebraic, min(rows, cols))
        kappa = sigma[0] / sigma[algebraic - 1]
        tracker.holds(algebraic / er, kappa ** 2)

        # Valores singulares no nulos iguales: er == rank
        left = random_orthogonal(rows, rng)[:, :rank]
        right = random_orthogonal(cols, rng)[:, :rank]
        flat = abs(c) * left @ right.T
        tracker.close(effective_rank(flat), float(rank), 1e-9)
        tracker.trials += 1
    return tracker.result()


# ---------------------------------------------------------------------------
# Estabilidad de la regla delta
# ---------------------------------------------------------------------------

def verify_stability(trials: int = 100, seed: int = 0) -> CheckResult:
    """Para ||k|| = 1 y beta en (0, 1): radio espectral de I - beta k k^T <= 1, autovalor 1 - beta a lo largo de k."""
    tracker = _SlackTracker("stability", tol=1e-12)
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        d = int(rng.integers(2, 9))
        k = _unit(rng.standard_normal(d))
        beta = float(rng.uniform(1e-6, 1.0 - 1e-6))
        eigenvalues = np.linalg.eigvalsh(np.eye(d) - beta * np.outer(k, k))
        tracker.holds(float(np.max(np.abs(eigenvalues))), 1.0)
        tracker.close(float(eigenvalues[0]), 1.0 - beta, 1e-12)
        for value in eigenvalues[1:]:
            tracker.close(float(value), 1.0, 1e-12)
        tracker.trials += 1
    return tracker.result()


# ---------------------------------------------------------------------------
# Invariancia ortogonal, convolución y monotonía de PCA
# ---------------------------------------------------------------------------

def mixer_invariance_error(rng: np.random.Generator, variant: Variant, transform: np.ndarray, steps: int = 6, value_dim: int = 3) -> float:
    """Error relativo entre las salidas con (q, k) y con (T q, T k) en la frontera del mezclador."""
    key_dim = transform.shape[0]
    q = rng.standard_normal((steps, key_dim))
    k = rng.standard_normal((steps, key_dim))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    k /= np.linalg.norm(k, axis=1, keepdims=True)
    v = rng.standard_normal((steps, value_dim))
    beta = _unit_interval(rng, steps)
    alpha = _unit_interval(rng, steps)
    base, _ = mixer_recurrence(q, k, v, beta, alpha, variant)
    moved, _ = mixer_recurrence(q @ transform.T, k @ transform.T, v, beta, alpha, variant)
    return float(np.linalg.norm(moved - base) / max(np.linalg.norm(base), 1e-300))


def verify_invariance_and_conv(trials: int = 50, seed: int = 0) -> CheckResult:
    tracker = _SlackTracker("invariance_and_conv")
    worst_mixer = worst_conv = 0.0
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        d = int(rng.integers(2, 7))
        if trial % 5 == 0:
            transform = np.eye(d)[rng.permutation(d)]
        else:
            transform = random_orthogonal(d, rng)
        for variant in Variant:
            error = mixer_invariance_error(rng, variant, transform)
            worst_mixer = max(worst_mixer, error)
            tracker.holds(error, 1e-10)

        # Conv1D(X, W) P^T == Conv1D(X P^T, P W)
        x = rng.standard_normal((7, d))
        w = rng.standard_normal((d, 4))
        width = int(rng.integers(1, d + 1))
        retained = np.sort(rng.choice(d, size=width, replace=False))
        conv_error = float(np.max(np.abs(causal_conv(x, w)[:, retained] - causal_conv(x[:, retained], w[retained]))))
        worst_conv = max(worst_conv, conv_error)
        tracker.holds(conv_error, 1e-14)

        # u(K T^T) >= u(K) con T de PCA propia
        keys = rng.standard_normal((4 * d, d)) * np.exp(rng.uniform(-2.0, 0.0, d))
        stats = HeadCalibration(captured_k=keys, captured_q=keys, input_column_norms=np.ones(1))
        base_util = effective_rank(keys) / d
        for reduced in range(1, d + 1):
            pca = pca_transform(stats, reduced, mode=SelectionMode.KEYS)
            tracker.holds(base_util - 1e-12, effective_rank(keys @ pca.t.T) / reduced)
        tracker.trials += 1
    tracker.details["maxMixerError"] = worst_mixer
    tracker.details["maxConvError"] = worst_conv
    return tracker.result()


# ---------------------------------------------------------------------------
# Chequeos adicionales
# ---------------------------------------------------------------------------

def _best_subset_sigma(m: np.ndarray, k: int) -> float:
    return max(svd_values(m[:, list(cols)])[-1] for cols in itertools.combinations(range(m.shape[1]), k))


def verify_srrqr_contract(trials: int = 50, seed: int = 0, f: float = 2.0) -> CheckResult:
    """max rho <= f, cota de sigma_min, |det A_k| creciente y comparación con el mejor subconjunto."""
    tracker = _SlackTracker("srrqr_contract", tol=1e-12)
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        m = rng.standard_normal((8, 12)) * np.exp(rng.uniform(-3.0, 0.0, 12))
        k, n = 4, 12
        result = srrqr(m, k, f)
        tracker.holds(float(np.max(swap_gains(m, result.selected))), f * (1.0 + 1e-12))
        factor = np.sqrt(1.0 + f * f * k * (n - k))
        tracker.holds(svd_values(m)[k - 1] / factor, svd_values(m[:, result.selected])[-1])
        for before, after in zip(result.log_abs_dets, result.log_abs_dets[1:]):
            tracker.holds(before + 1e-15, after)

        small_n = int(rng.integers(2, 7))
        small_k = int(rng.integers(1, min(3, small_n - 1) + 1))
        small = rng.standard_normal((6, small_n))
        chosen = srrqr(small, small_k, f).selected
        bound = _best_subset_sigma(small, small_k) / np.sqrt(1.0 + f * f * small_k * (small_n - small_k))
        tracker.holds(bound, svd_values(small[:, chosen])[-1])
        tracker.trials += 1
    return tracker.result()


def verify_query_conditioning(trials: int = 50, seed: int = 0) -> CheckResult:
    """kappa del Jacobiano de W_Q -> S W_Q^T x igual a kappa(S) (tolerancia 1e-8)."""
    tracker = _SlackTracker("query_conditioning")
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        value_dim = int(rng.integers(1, 5))
        key_dim = int(rng.integers(value_dim, 6))
        s = rng.standard_normal((value_dim, key_dim))
        x = rng.standard_normal(int(rng.integers(1, 5)))
        tracker.close(query_jacobian_condition(s, x), condition_number(s), 1e-8)
        tracker.trials += 1
    return tracker.result()


def verify_conv_adaptation(trials: int = 20, seed: int = 0, grid_step: float = 0.01, grid_radius: float = 0.5) -> CheckResult:
    """
    ((T ⊙ T) w)_k == (T diag(w) T^T)_kk por retardo, y (T ⊙ T) W minimiza el error
    esperado con entrada decorrelacionada frente a una grilla densa por coordenada.
    """
    tracker = _SlackTracker("conv_adaptation", tol=1e-12)
    offsets = np.arange(-grid_radius, grid_radius + grid_step / 2, grid_step)
    for trial in range(trials):
        rng = _trial_rng(seed, trial)
        d, length = int(rng.integers(2, 6)), int(rng.integers(1, 5))
        t = random_orthogonal(d, rng)
        w = rng.standard_normal((d, length))
        adapted = adapt_conv_filters(t, w)
        for lag in range(length):
            expanded = np.diag(t @ np.diag(w[:, lag]) @ t.T)
            tracker.holds(float(np.max(np.abs(adapted[:, lag] - expanded))), 1e-12)

        optimum = diagonal_adaptation_error(t, w, adapted)
        best_grid = optimum
        for row, lag in itertools.product(range(d), range(length)):
            for offset in offsets:
                candidate = adapted.copy()
                candidate[row, lag] += offset
                best_grid = min(best_grid, diagonal_adaptation_error(t, w, candidate))
        tracker.holds(optimum - 1e-6, best_grid)
        tracker.trials += 1
    return tracker.result()


CHECKS: Dict[str, Callable[..., CheckResult]] = {
    "rank_bound": verify_rank_bound,
    "sandwich": verify_sandwich,
    "theorem_snr": verify_theorem_snr,
    "corollary_expected": verify_corollary_expected,
    "kappa_bounds": verify_kappa_bounds,
    "er_properties": verify_er_properties,
    "stability": verify_stability,
    "invariance_and_conv": verify_invariance_and_conv,
    "srrqr_contract": verify_srrqr_contract,
    "query_conditioning": verify_query_conditioning,
    "conv_adaptation": verify_conv_adaptation,
}


def run_all(seed: int = 0, names: Optional[Sequence[str]] = None, trials: Optional[int] = None) -> VerifyReport:
    """
    Ejecuta los chequeos registrados (todos o los nombrados).

    Args:
        trials: si se indica, reemplaza el presupuesto por defecto de cada chequeo
    """
    selected = list(CHECKS) if not names else list(names)
    unknown = [name for name in selected if name not in CHECKS]
    if unknown:
        raise ConfigError("chequeos desconocidos", errors=[f"{name}: no registrado" for name in unknown])
    kwargs = {"seed": seed}
    if trials is not None:
        kwargs["trials"] = trials
    report = VerifyReport(seed=seed, checks=[CHECKS[name](**kwargs) for name in selected])
    if report.passed:
        logger.info("✅ Verificación completa: %d chequeos aprobados", len(report.checks))
    else:
        failed = [check.name for check in report.checks if not check.passed]
        logger.error("❌ Chequeos fallidos: %s", ", ".join(failed))
    return report
