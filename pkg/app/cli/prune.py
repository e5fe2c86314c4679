"""
Subcomando `prune`: calibración, selección y aplicación del plan sobre un
checkpoint, con diagnósticos de rango antes y después.
"""
import argparse
from typing import List

from app.cli.common import add_checkpoint_argument, add_common_arguments, load_checkpoint, load_run_config, output_dir
from app.core.errors import EXIT_OK
from app.core.logging import get_logger
from app.models.checkpoint import save_model, save_tensors, write_csv, write_json
from app.schemas.report import SpectrumResult
from app.schemas.task import ToyModel
from app.services.pruning import calibration_matrix
from app.services.tasks import EVAL_STREAM, eval_recall, gen_recall, model_spectra, prune_model, recovery_finetune

logger = get_logger(__name__)

RANK_REPORT_HEADER = ["stage", "layer", "head", "key_dim", "effective_rank", "utilization", "kappa_s", "kappa_k", "tokens_skipped"]


def register(subparsers) -> None:
    parser = subparsers.add_parser("prune", help="poda las dimensiones de clave/consulta de un checkpoint")
    add_common_arguments(parser)
    add_checkpoint_argument(parser)
    parser.add_argument("--rft", action="store_true", help="ejecuta además el ajuste de recuperación (rftSteps)")
    parser.set_defaults(handler=cmd_prune)


def _rank_rows(stage: str, model: ToyModel, spectra: List[SpectrumResult]):
    rows = []
    for layer, result in zip(model.layers, spectra):
        for head in result.report.heads:
            rows.append((
                stage, head.layer, head.head, layer.dims.key_dim,
                head.effective_rank, head.utilization, head.kappa_s, head.kappa_k, head.tokens_skipped,
            ))
    return rows


def cmd_prune(args: argparse.Namespace) -> int:
    config = load_run_config(args)
    out = output_dir(config)
    task = config.task_spec()
    model = load_checkpoint(args, config)

    pruned, plan, calibration = prune_model(
        model, task, config.strategy, config.mode, config.ratio,
        seed=config.seed,
        f=config.f,
        calibration_sequences=config.calibration_sequences,
        max_samples=config.calibration_samples,
        normalized=config.normalized_calibration,
    )
    save_model(out / "checkpoint", pruned)
    write_json(out / "plan.json", plan.model_dump(by_alias=True, mode="json"))

    # Una matriz M por cabeza para re-verificar la garantía del SRRQR desde disco
    dump = {
        f"layers.{index}.heads.{head}.m": calibration_matrix(stats, config.mode)
        for index, layer_stats in enumerate(calibration)
        for head, stats in enumerate(layer_stats.heads)
    }
    save_tensors(out / "calibration", dump, {
        "kind": "calibration",
        "mode": config.mode.value,
        "strategy": config.strategy.value,
        "f": config.f,
    })

    sample = gen_recall(task, 1, stream=(EVAL_STREAM,)).tokens[0]
    rows = _rank_rows("before", model, model_spectra(model, sample, config.skip))
    rows += _rank_rows("after", pruned, model_spectra(pruned, sample, config.skip))
    write_csv(out / "rank_report.csv", RANK_REPORT_HEADER, rows)

    metrics = {
        "ratio": config.ratio,
        "strategy": config.strategy.value,
        "mode": config.mode.value,
        "accuracyBefore": eval_recall(model, task, config.eval_sequences),
        "accuracyAfter": eval_recall(pruned, task, config.eval_sequences),
    }
    if args.rft and config.rft_steps:
        tuned = recovery_finetune(pruned, plan, task, config.rft_hyper())
        save_model(out / "checkpoint-rft", tuned)
        metrics["accuracyAfterRft"] = eval_recall(tuned, task, config.eval_sequences)
    write_json(out / "prune_metrics.json", metrics)
    logger.info(
        "✅ Poda %s c=%.2f: precisión %.3f -> %.3f",
        config.strategy.value, config.ratio, metrics["accuracyBefore"], metrics["accuracyAfter"],
    )
    return EXIT_OK
