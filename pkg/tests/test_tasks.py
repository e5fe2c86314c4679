import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import ConfigError, DivergenceError, ShapeMismatchError
from app.schemas.mixer import HeadDims, Variant
from app.schemas.plan import SelectionMode, Strategy
from app.schemas.task import ComparisonReport, RecallTaskSpec, TrainHyper
from app.services.pruning import select
from app.services.tasks import (
    EVAL_STREAM,
    compare_pruners,
    eval_recall,
    gen_recall,
    init_toy_model,
    lookup_table_model,
    model_spectra,
    prune_model,
    recovery_finetune,
    sign_test_p_value,
    train_toy,
)


@pytest.fixture
def task():
    return RecallTaskSpec(vocab=16, num_pairs=4, seq_len=11, seed=5)


@pytest.fixture
def toy_model():
    dims = HeadDims(model_dim=8, key_dim=4, value_dim=4, num_heads=2, conv_len=2)
    return init_toy_model(16, dims, num_layers=2, variant=Variant.DELTA, seed=0)


def test_task_spec_rejects_short_sequences():
    with pytest.raises(ValueError):
        RecallTaskSpec(vocab=16, num_pairs=4, seq_len=8)
    with pytest.raises(ValueError):
        RecallTaskSpec(vocab=6, num_pairs=4, seq_len=9)


def test_gen_recall_structure(task):
    data = gen_recall(task, 20, stream=(EVAL_STREAM,))
    assert data.tokens.shape == (20, 11)
    assert np.all(data.query_positions == 10)
    for row, target in zip(data.tokens, data.targets):
        pairs = dict(zip(row[:8:2], row[1:8:2]))
        assert len(pairs) == 4
        assert pairs[row[-1]] == target
        # el relleno repite pares presentados sin reasignar claves
        body = row[8:-1]
        for key, value in pairs.items():
            for position in np.flatnonzero(body == key):
                if position + 1 < len(body):
                    assert body[position + 1] == value


def test_gen_recall_is_deterministic(task):
    first = gen_recall(task, 5, stream=(1, 2))
    second = gen_recall(task, 5, stream=(1, 2))
    other = gen_recall(task, 5, stream=(1, 3))
    assert np.array_equal(first.tokens, second.tokens)
    assert not np.array_equal(first.tokens, other.tokens)


def test_dataset_jsonl(task):
    lines = gen_recall(task, 3).to_jsonl().strip().split("\n")
    assert len(lines) == 3
    assert '"queryPosition": 10' in lines[0]


def test_lookup_table_model_has_perfect_recall(task):
    model = lookup_table_model(task.vocab)
    assert eval_recall(model, task, count=64) == 1.0


def test_train_toy_is_deterministic(toy_model, task):
    hyper = TrainHyper(steps=5, batch_size=4, seed=1)
    first = train_toy(toy_model, task, hyper)
    second = train_toy(toy_model, task, hyper)
    assert len(first.losses) == 5
    assert first.losses == second.losses
    assert all(np.isfinite(first.losses))


def test_train_toy_divergence(toy_model, task):
    with pytest.raises(DivergenceError):
        train_toy(toy_model, task, TrainHyper(steps=3, batch_size=2, divergence_threshold=1e-6))


def test_prune_model_zero_ratio_keeps_weights(toy_model, task):
    pruned, plan, _ = prune_model(toy_model, task, Strategy.DRRQR, SelectionMode.JOINT, 0.0, calibration_sequences=4)
    assert plan.is_identity()
    for name, value in toy_model.named_parameters().items():
        assert np.array_equal(pruned.named_parameters()[name], value)


@pytest.mark.parametrize("strategy", list(Strategy))
def test_prune_model_halves_key_dim(toy_model, task, strategy):
    pruned, plan, calibration = prune_model(toy_model, task, strategy, SelectionMode.JOINT, 0.5, calibration_sequences=4)
    assert len(calibration) == 2
    assert all(layer.dims.key_dim == 2 for layer in pruned.layers)
    assert all(head.target_width == 2 for layer in plan.layers for head in layer.heads)
    assert 0.0 <= eval_recall(pruned, task, count=16) <= 1.0


def test_recovery_finetune_requires_applied_plan(toy_model, task):
    _, plan, _ = prune_model(toy_model, task, Strategy.L1, SelectionMode.JOINT, 0.5, calibration_sequences=2)
    with pytest.raises(ShapeMismatchError):
        recovery_finetune(toy_model, plan, task, TrainHyper(steps=1))


def test_recovery_finetune_runs_on_pruned_model(toy_model, task):
    pruned, plan, _ = prune_model(toy_model, task, Strategy.L1, SelectionMode.JOINT, 0.5, calibration_sequences=2)
    tuned = recovery_finetune(pruned, plan, task, TrainHyper(steps=2, batch_size=2))
    assert tuned.layers[0].dims.key_dim == 2


def test_sign_test_p_value():
    assert sign_test_p_value(10, 0) == pytest.approx(1 / 1024)
    assert sign_test_p_value(0, 0) == 1.0
    assert sign_test_p_value(5, 5) == pytest.approx(638 / 1024)


def test_compare_pruners_report(toy_model, task):
    report = compare_pruners(toy_model, task, ratio=0.5, seeds=[0, 1], eval_count=8)
    assert report.wins + report.losses + report.ties == 2
    assert set(report.accuracies) == {"drrqr", "rand"}
    assert 0.0 <= report.p_value <= 1.0


def test_compare_pruners_rejects_same_strategy(toy_model, task):
    with pytest.raises(ConfigError):
        compare_pruners(toy_model, task, seeds=[0], challenger=Strategy.RAND, reference=Strategy.RAND)


def test_comparison_report_passes_only_when_challenger_keeps_up():
    fields = dict(ratio=0.5, seeds=[0], baseline_accuracy=1.0, accuracies={}, wins=0, losses=0, ties=1, p_value=1.0)
    assert ComparisonReport(means={"drrqr": 0.8, "rand": 0.8}, **fields).passed
    assert not ComparisonReport(means={"drrqr": 0.7, "rand": 0.8}, **fields).passed
    dumped = ComparisonReport(means={"drrqr": 0.9, "rand": 0.8}, **fields).model_dump(by_alias=True)
    assert dumped["passed"] is True


def test_untrained_model_scores_at_chance():
    task = RecallTaskSpec(vocab=64, num_pairs=8, seq_len=33, seed=3)
    dims = HeadDims(model_dim=16, key_dim=8, value_dim=8, num_heads=2, conv_len=4)
    model = init_toy_model(64, dims, num_layers=2, variant=Variant.DELTA, seed=4)
    count, chance = 512, 1.0 / 64
    sigma = np.sqrt(chance * (1.0 - chance) / count)
    assert abs(eval_recall(model, task, count) - chance) <= 3.0 * sigma


def test_recovery_finetune_keeps_accuracy_of_unpruned_model(task):
    model = lookup_table_model(task.vocab)
    before = eval_recall(model, task, count=256)
    tuned = recovery_finetune(model, None, task, TrainHyper(steps=50, batch_size=8, lr=settings.RFT_LR))
    assert eval_recall(tuned, task, count=256) >= before - 0.01


def test_model_spectra_one_result_per_layer(toy_model, task):
    tokens = gen_recall(task, 1).tokens[0]
    spectra = model_spectra(toy_model, tokens, skip=2)
    assert len(spectra) == 2
    assert spectra[1].report.heads[0].layer == 1
    assert spectra[0].tokens == list(range(2, 11))


@pytest.mark.slow
def test_training_reduces_loss(task):
    dims = HeadDims(model_dim=16, key_dim=8, value_dim=8, num_heads=2, conv_len=4)
    model = init_toy_model(task.vocab, dims, num_layers=2, variant=Variant.DELTA, seed=0)
    result = train_toy(model, task, TrainHyper(steps=400, batch_size=16, lr=0.01))
    assert np.mean(result.losses[-50:]) < np.mean(result.losses[:50])


@pytest.mark.slow
def test_single_pair_task_is_learned():
    task = RecallTaskSpec(vocab=16, num_pairs=1, seq_len=3, seed=0)
    dims = HeadDims(model_dim=16, key_dim=8, value_dim=8, num_heads=1, conv_len=4)
    model = init_toy_model(task.vocab, dims, num_layers=1, variant=Variant.DELTA, seed=0)
    result = train_toy(model, task, TrainHyper(steps=3000))
    assert eval_recall(result.model, task, count=512) >= 0.99
