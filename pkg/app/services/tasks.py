"""
Tarea sintética de recuerdo asociativo, modelo de juguete, entrenamiento,
evaluación, poda de extremo a extremo y ajuste de recuperación (RFT).
"""
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, DivergenceError, NonFiniteError, ShapeMismatchError
from app.core.logging import get_logger
from app.schemas.grad import AdamHyper, AdamState, LossKind, LossSpec
from app.schemas.mixer import HeadDims, HeadParams, LayerParams, Variant
from app.schemas.plan import CalibrationStats, PruningPlan, SelectionMode, Strategy
from app.schemas.report import SpectrumResult
from app.schemas.task import (
    ComparisonReport,
    LrSchedule,
    RecallDataset,
    RecallTaskSpec,
    ToyModel,
    TrainHyper,
    TrainResult,
)
from app.services.grad_engine import adam_step, layer_vjp, loss_value_and_grad, scheduled_lr
from app.services.mixers import LayerTrace, identity_filters, init_layer_params, trace_layer
from app.services.pruning import apply_plan_to_model, collect_calibration, grad_scores_from, select
from app.services.rank_diagnostics import spectrum_over_tokens

logger = get_logger(__name__)

# Flujos de aleatoriedad separados para entrenamiento, evaluación y calibración
TRAIN_STREAM = 1
EVAL_STREAM = 2
CALIBRATION_STREAM = 3


# ---------------------------------------------------------------------------
# Datos
# ---------------------------------------------------------------------------

def _filler(rng: np.random.Generator, keys: np.ndarray, values: np.ndarray, length: int) -> List[int]:
    filler: List[int] = []
    if length % 2 == 1:
        filler.append(int(values[rng.integers(len(values))]))
    while len(filler) < length:
        for index in rng.permutation(len(keys)):
            if len(filler) >= length:
                break
            filler.extend([int(keys[index]), int(values[index])])
    return filler


def gen_recall(spec: RecallTaskSpec, count: int = 1, stream: Sequence[int] = ()) -> RecallDataset:
    """
    Secuencias [k1, v1, ..., kP, vP, relleno, k_consulta] con objetivo v_consulta.

    El relleno repite pares ya presentados en orden aleatorio, así cada clave
    tiene un único valor por secuencia. Determinista por (seed, stream, índice).
    """
    tokens = np.zeros((count, spec.seq_len), dtype=np.int64)
    targets = np.zeros(count, dtype=np.int64)
    pairs = spec.num_pairs
    for row in range(count):
        rng = np.random.default_rng([spec.seed, *stream, row])
        chosen = rng.permutation(spec.vocab)[: 2 * pairs]
        keys, values = chosen[:pairs], chosen[pairs:]
        sequence = [int(token) for pair in zip(keys, values) for token in pair]
        sequence += _filler(rng, keys, values, spec.seq_len - 2 * pairs - 1)
        query = int(rng.integers(pairs))
        sequence.append(int(keys[query]))
        tokens[row] = sequence
        targets[row] = values[query]
    positions = np.full(count, spec.seq_len - 1, dtype=np.int64)
    return RecallDataset(tokens=tokens, query_positions=positions, targets=targets)


# ---------------------------------------------------------------------------
# Modelo
# ---------------------------------------------------------------------------

def init_toy_model(
    vocab: int,
    dims: HeadDims,
    num_layers: int,
    variant: Variant | str,
    seed: int = 0,
) -> ToyModel:
    rng = np.random.default_rng(seed)
    embedding = rng.normal(0.0, 1.0, (vocab, dims.model_dim))
    layers = [init_layer_params(dims, rng) for _ in range(num_layers)]
    lm_head = rng.normal(0.0, 1.0 / np.sqrt(dims.model_dim), (dims.model_dim, vocab))
    return ToyModel(embedding=embedding, layers=layers, lm_head=lm_head, variant=Variant(variant))


def lookup_table_model(vocab: int) -> ToyModel:
    """
    Modelo construido con recuerdo perfecto: embedding one-hot, una cabeza lineal,
    la clave ve el token anterior (filtro con retardo 1) y la consulta el actual.
    """
    eye = np.eye(vocab)
    zero_gate = np.zeros((vocab, 1))
    lag_one = np.zeros((vocab, 2))
    lag_one[:, 1] = 1.0
    head = HeadParams(
        w_q=eye, w_k=eye, w_v=eye,
        w_beta=zero_gate, w_alpha=zero_gate,
        conv_q=identity_filters(vocab, 2),
        conv_k=lag_one,
        conv_v=identity_filters(vocab, 2),
    )
    layer = LayerParams(heads=[head], w_o=eye, rms_eps=settings.RMS_EPS)
    return ToyModel(embedding=eye, layers=[layer], lm_head=eye, variant=Variant.LINEAR)


def model_forward(model: ToyModel, tokens: np.ndarray) -> Tuple[np.ndarray, List[LayerTrace], List[np.ndarray]]:
    """Flujo residual H_{l+1} = H_l + capa_l(H_l); logits = H_L lmHead."""
    hidden = model.embedding[tokens]
    traces, inputs = [], []
    for layer in model.layers:
        inputs.append(hidden)
        trace = trace_layer(layer, hidden, model.variant)
        traces.append(trace)
        hidden = hidden + trace.y
    return hidden @ model.lm_head, traces, inputs + [hidden]


def query_targets(dataset: RecallDataset, vocab: int) -> np.ndarray:
    """Objetivos one-hot en la posición de consulta; el resto de las filas queda en cero (enmascarado)."""
    count, steps = dataset.tokens.shape
    targets = np.zeros((count, steps, vocab))
    targets[np.arange(count), dataset.query_positions, dataset.targets] = 1.0
    return targets


def model_backward(model: ToyModel, dataset: RecallDataset) -> Tuple[float, Dict[str, np.ndarray]]:
    """Entropía cruzada en las posiciones de consulta y gradientes de todos los parámetros."""
    logits, traces, hiddens = model_forward(model, dataset.tokens)
    loss = LossSpec(kind=LossKind.CROSS_ENTROPY, targets=query_targets(dataset, model.vocab))
    value, grad_logits = loss_value_and_grad(logits, loss)

    final = hiddens[-1]
    grads = {"lm_head": final.reshape(-1, final.shape[-1]).T @ grad_logits.reshape(-1, model.vocab)}
    grad_hidden = grad_logits @ model.lm_head.T
    for index in reversed(range(len(model.layers))):
        grad_x, layer_grads = layer_vjp(model.layers[index], traces[index], grad_hidden, prefix=f"layers.{index}.")
        grads.update(layer_grads)
        grad_hidden = grad_hidden + grad_x
    grad_embedding = np.zeros_like(model.embedding)
    np.add.at(grad_embedding, dataset.tokens, grad_hidden)
    grads["embedding"] = grad_embedding
    return value, grads


# ---------------------------------------------------------------------------
# Entrenamiento y evaluación
# ---------------------------------------------------------------------------

def train_toy(model: ToyModel, task: RecallTaskSpec, hyper: TrainHyper) -> TrainResult:
    """
    Adam sobre la entropía cruzada en las posiciones de consulta, con un lote
    nuevo por paso (semilla (task.seed, hyper.seed, paso)) y tasa de aprendizaje
    con calentamiento y decaimiento coseno salvo schedule=constant.

    Raises:
        DivergenceError: si la pérdida supera divergence_threshold o no es finita
    """
    state = AdamState()
    losses: List[float] = []
    for step in range(hyper.steps):
        batch = gen_recall(task, hyper.batch_size, stream=(TRAIN_STREAM, hyper.seed, step))
        try:
            value, grads = model_backward(model, batch)
        except NonFiniteError as exc:
            raise DivergenceError(f"pérdida no finita en el paso {step}") from exc
        if not math.isfinite(value) or value > hyper.divergence_threshold:
            logger.error("❌ Entrenamiento divergente en el paso %d (loss=%s)", step, value)
            raise DivergenceError(f"pérdida {value} en el paso {step}", errors=[f"step={step}"])
        losses.append(value)
        lr = hyper.lr
        if hyper.schedule == LrSchedule.COSINE:
            lr = scheduled_lr(hyper.lr, step, hyper.steps, hyper.warmup_steps, hyper.min_lr_ratio)
        values, state = adam_step(model.named_parameters(), grads, AdamHyper(lr=lr), state)
        model = model.with_parameters(values)
        if (step + 1) % hyper.log_every == 0:
            recent = float(np.mean(losses[-hyper.log_every:]))
            logger.info("🔍 Paso %d/%d: loss medio %.4f", step + 1, hyper.steps, recent)
    if hyper.steps:
        logger.info("✅ Entrenamiento terminado: loss final %.4f", losses[-1])
    return TrainResult(model=model, losses=losses)


def eval_recall(model: ToyModel, task: RecallTaskSpec, count: int = 256, stream: Sequence[int] = (EVAL_STREAM,)) -> float:
    """Precisión de decodificación argmax en la posición de consulta (empates al token más bajo)."""
    dataset = gen_recall(task, count, stream=stream)
    logits, _, _ = model_forward(model, dataset.tokens)
    query_logits = logits[np.arange(dataset.size), dataset.query_positions]
    predictions = np.argmax(query_logits, axis=-1)
    return float(np.mean(predictions == dataset.targets))


def recovery_finetune(
    model: ToyModel,
    plan: Optional[PruningPlan],
    task: RecallTaskSpec,
    hyper: Optional[TrainHyper] = None,
) -> ToyModel:
    """Ajuste completo de parámetros tras la poda (mismo entrenador, menos pasos)."""
    hyper = hyper or TrainHyper(steps=settings.RFT_STEPS, lr=settings.RFT_LR)
    if plan is not None:
        for layer, layer_plan in zip(model.layers, plan.layers):
            widths = {head.target_width for head in layer_plan.heads}
            if layer.dims.key_dim not in widths:
                raise ShapeMismatchError("recovery_finetune: el plan no fue aplicado al modelo")
    return train_toy(model, task, hyper).model


# ---------------------------------------------------------------------------
# Poda del modelo
# ---------------------------------------------------------------------------

def model_grad_scores(model: ToyModel, dataset: RecallDataset, mode: SelectionMode | str = SelectionMode.JOINT) -> List[List[np.ndarray]]:
    """Puntajes del podador grad por capa y cabeza sobre el conjunto de calibración."""
    _, grads = model_backward(model, dataset)
    return [
        grad_scores_from(layer, grads, prefix=f"layers.{index}.", mode=mode)
        for index, layer in enumerate(model.layers)
    ]


def prune_model(
    model: ToyModel,
    task: RecallTaskSpec,
    strategy: Strategy | str,
    mode: SelectionMode | str,
    ratio: float,
    seed: int = 0,
    f: float | None = None,
    calibration_sequences: int | None = None,
    max_samples: int | None = None,
    normalized: bool = False,
) -> Tuple[ToyModel, PruningPlan, List[CalibrationStats]]:
    """Calibración, selección y aplicación del plan sobre todas las capas."""
    strategy = Strategy(strategy)
    count = calibration_sequences or settings.CALIBRATION_SEQUENCES
    dataset = gen_recall(task, count, stream=(CALIBRATION_STREAM, seed))
    _, _, hiddens = model_forward(model, dataset.tokens)
    calibration = [
        collect_calibration(layer, hiddens[index], model.variant, max_samples, seed=seed, normalized=normalized)
        for index, layer in enumerate(model.layers)
    ]
    grad_scores = model_grad_scores(model, dataset, mode) if strategy == Strategy.GRAD else None
    plan = select(strategy, mode, ratio, model.layers, calibration, grad_scores, seed=seed, f=f)
    return apply_plan_to_model(model, plan), plan, calibration


def sign_test_p_value(wins: int, losses: int) -> float:
    """P-valor unilateral de la prueba de signos (empates descartados)."""
    trials = wins + losses
    if trials == 0:
        return 1.0
    return sum(math.comb(trials, i) for i in range(wins, trials + 1)) / 2.0 ** trials


def compare_pruners(
    model: ToyModel,
    task: RecallTaskSpec,
    ratio: float = 0.5,
    seeds: Sequence[int] = tuple(range(10)),
    mode: SelectionMode | str = SelectionMode.JOINT,
    challenger: Strategy | str = Strategy.DRRQR,
    reference: Strategy | str = Strategy.RAND,
    rft_steps: int = 0,
    eval_count: int = 256,
    rft_lr: float | None = None,
) -> ComparisonReport:
    """Precisión previa a RFT de dos estrategias sobre varias semillas y prueba de signos."""
    challenger, reference = Strategy(challenger), Strategy(reference)
    if challenger == reference:
        raise ConfigError(f"el retador y la referencia coinciden: {challenger.value}")
    accuracies: Dict[str, List[float]] = {challenger.value: [], reference.value: []}
    recovered: Dict[str, List[float]] = {challenger.value: [], reference.value: []} if rft_steps else {}
    for seed in seeds:
        for strategy in (challenger, reference):
            pruned, plan, _ = prune_model(model, task, strategy, mode, ratio, seed=seed)
            accuracies[strategy.value].append(eval_recall(pruned, task, eval_count))
            if rft_steps:
                tuned = recovery_finetune(pruned, plan, task, TrainHyper(steps=rft_steps, lr=settings.RFT_LR if rft_lr is None else rft_lr, seed=seed))
                recovered[strategy.value].append(eval_recall(tuned, task, eval_count))

    ours = np.array(accuracies[challenger.value])
    theirs = np.array(accuracies[reference.value])
    wins = int(np.sum(ours > theirs))
    losses = int(np.sum(ours < theirs))
    report = ComparisonReport(
        ratio=ratio,
        challenger=challenger.value,
        reference=reference.value,
        seeds=list(seeds),
        baseline_accuracy=eval_recall(model, task, eval_count),
        accuracies=accuracies,
        recovered=recovered,
        means={name: float(np.mean(values)) for name, values in accuracies.items()},
        wins=wins,
        losses=losses,
        ties=len(seeds) - wins - losses,
        p_value=sign_test_p_value(wins, losses),
    )
    logger.info(
        "✅ %s vs %s: medias %.3f / %.3f, p=%.3f",
        challenger.value, reference.value,
        report.means[challenger.value], report.means[reference.value], report.p_value,
    )
    return report


def model_spectra(model: ToyModel, tokens: np.ndarray, skip: int = 0) -> List[SpectrumResult]:
    """Espectros por capa para una secuencia, usando como entrada de cada capa su flujo residual."""
    _, _, hiddens = model_forward(model, np.asarray(tokens)[None, :])
    return [
        spectrum_over_tokens(layer, hiddens[index][0], model.variant, skip=skip, layer=index)
        for index, layer in enumerate(model.layers)
    ]
