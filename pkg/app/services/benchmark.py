"""
Micro-benchmark de la recurrencia podada: FLOPs exactos del modelo de costo
y tiempo de pared (mediana) para d_k completo y comprimido.
"""
import statistics
import time

import numpy as np

from app.core.errors import OutOfRangeError
from app.core.logging import get_logger
from app.schemas.mixer import Variant
from app.schemas.report import BenchReport, BenchRow
from app.services.mixers import flops_per_step, mixer_recurrence, sigmoid
from app.services.pruning import retained_width

logger = get_logger(__name__)

MIN_WARMUP = 3
STATE_ITEMSIZE = np.dtype(np.float64).itemsize


class FlopTally:
    """Operaciones de punto flotante ejecutadas, contadas por primitiva según la forma de los operandos."""

    def __init__(self):
        self.count = 0

    def matvec(self, m: np.ndarray, x: np.ndarray) -> np.ndarray:
        self.count += 2 * m.size
        return m @ x

    def outer(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.count += a.size * b.size
        return np.outer(a, b)

    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.count += np.broadcast(a, b).size
        return a + b

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.count += np.broadcast(a, b).size
        return a - b

    def scale(self, c: float, a: np.ndarray) -> np.ndarray:
        self.count += a.size
        return c * a

    def normalize(self, x: np.ndarray) -> np.ndarray:
        # cuadrados, suma y división
        self.count += 3 * x.size
        return x / np.sqrt(np.sum(x * x))


def counted_step(tally: FlopTally, s: np.ndarray, q, k, v, beta: float, alpha: float, variant: Variant):
    """Un token del mezclador (normalización de q y k, escritura y lectura) sobre el contador."""
    q = tally.normalize(q)
    k = tally.normalize(k)
    if variant == Variant.LINEAR:
        s = tally.add(s, tally.outer(v, k))
    else:
        err = tally.scale(beta, tally.sub(tally.matvec(s, k), v))
        if variant == Variant.GATED:
            s = tally.scale(alpha, s)
        s = tally.sub(s, tally.outer(err, k))
    return s, tally.matvec(s, q)


def count_recurrence_flops(key_dim: int, value_dim: int, variant: Variant | str, steps: int = 4, seed: int = 0) -> int:
    """FLOPs por token medidos ejecutando la recurrencia con el contador."""
    variant = Variant(variant)
    rng = np.random.default_rng(seed)
    tally = FlopTally()
    s = np.zeros((value_dim, key_dim))
    for _ in range(steps):
        s, _ = counted_step(
            tally, s,
            rng.standard_normal(key_dim), rng.standard_normal(key_dim), rng.standard_normal(value_dim),
            float(sigmoid(rng.standard_normal())), float(sigmoid(rng.standard_normal())), variant,
        )
    return tally.count // steps


def state_bytes(key_dim: int, value_dim: int, num_heads: int = 1) -> int:
    """Memoria del estado recurrente por secuencia: heads * d_k * d_v * itemsize."""
    return num_heads * key_dim * value_dim * STATE_ITEMSIZE


def _streams(rng: np.random.Generator, batch: int, tokens: int, key_dim: int, value_dim: int):
    q = rng.standard_normal((batch, tokens, key_dim))
    k = rng.standard_normal((batch, tokens, key_dim))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    k /= np.linalg.norm(k, axis=-1, keepdims=True)
    v = rng.standard_normal((batch, tokens, value_dim))
    beta = sigmoid(rng.standard_normal((batch, tokens)))
    alpha = sigmoid(rng.standard_normal((batch, tokens)))
    return q, k, v, beta, alpha


def bench_mixer(
    key_dim: int,
    value_dim: int,
    variant: Variant | str,
    tokens: int = 256,
    batch: int = 8,
    num_heads: int = 1,
    seed: int = 0,
    warmup: int = MIN_WARMUP,
    repeats: int = 5,
) -> BenchRow:
    """Mediana de `repeats` corridas tras `warmup` corridas de calentamiento."""
    if warmup < MIN_WARMUP:
        raise OutOfRangeError(f"warmup={warmup} debe ser >= {MIN_WARMUP}")
    if repeats < 1:
        raise OutOfRangeError("repeats debe ser >= 1")
    variant = Variant(variant)
    rng = np.random.default_rng(seed)
    # Las cabezas se apilan en el eje de lote
    q, k, v, beta, alpha = _streams(rng, batch * num_heads, tokens, key_dim, value_dim)

    for _ in range(warmup):
        mixer_recurrence(q, k, v, beta, alpha, variant)
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        mixer_recurrence(q, k, v, beta, alpha, variant)
        timings.append(time.perf_counter() - start)

    median = statistics.median(timings)
    return BenchRow(
        key_dim=key_dim,
        value_dim=value_dim,
        flops_per_token=num_heads * flops_per_step(key_dim, value_dim, variant),
        state_bytes=state_bytes(key_dim, value_dim, num_heads),
        median_seconds=median,
        tokens_per_second=batch * tokens / median if median > 0 else float("inf"),
    )


def run_bench(
    key_dim: int,
    value_dim: int,
    ratio: float,
    variant: Variant | str = Variant.DELTA,
    tokens: int = 256,
    batch: int = 8,
    num_heads: int = 1,
    seed: int = 0,
    warmup: int = MIN_WARMUP,
    repeats: int = 5,
) -> BenchReport:
    """
    Compara d_k completo contra d_k' = retained_width(d_k, ratio).

    La razón de FLOPs del modelo de costo se contrasta con la medida por el
    contador; la aceleración de pared solo se reporta y se marca si el
    comprimido resulta más lento.
    """
    variant = Variant(variant)
    reduced = retained_width(key_dim, ratio)
    common = dict(variant=variant, tokens=tokens, batch=batch, num_heads=num_heads, seed=seed, warmup=warmup, repeats=repeats)
    baseline = bench_mixer(key_dim, value_dim, **common)
    compressed = bench_mixer(reduced, value_dim, **common)

    expected = count_recurrence_flops(reduced, value_dim, variant) / count_recurrence_flops(key_dim, value_dim, variant)
    speedup = compressed.tokens_per_second / baseline.tokens_per_second
    report = BenchReport(
        variant=variant.value,
        tokens=batch * tokens,
        baseline=baseline,
        compressed=compressed,
        flop_ratio=compressed.flops_per_token / baseline.flops_per_token,
        expected_flop_ratio=expected,
        memory_ratio=compressed.state_bytes / baseline.state_bytes,
        speedup=speedup,
        slower_than_baseline=speedup < 1.0,
    )
    if report.slower_than_baseline:
        logger.warning("⚠️ El mezclador comprimido fue más lento que el completo (%.2fx)", speedup)
    logger.info(
        "✅ Benchmark d_k %d -> %d: FLOPs x%.3f, memoria x%.3f, pared x%.2f",
        key_dim, reduced, report.flop_ratio, report.memory_ratio, speedup,
    )
    return report
